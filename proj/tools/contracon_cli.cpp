#include <iostream>
#include <string>
#include <vector>

#include "contracon/cli.h"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return contracon::run_cli(args, std::cout, std::cerr);
}

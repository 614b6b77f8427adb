#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "contracon/classifier.h"

namespace contracon {

// Binary PGM (P5) or PPM (P6) with maxval <= 255, scaled to [0,1].
Image read_netpbm(const std::filesystem::path& path);
void write_netpbm(const Image& image, const std::filesystem::path& path);

// Entry point behind the `contracon` executable. Returns 0 on success, 2 for
// usage or configuration problems, 1 for any other failure; diagnostics are a
// single line on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace contracon

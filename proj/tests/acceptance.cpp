// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>

#include "contracon/checkpoint.h"
#include "contracon/run_config.h"
#include "contracon/trainer.h"
#include "testkit.h"

using namespace contracon;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& what) {
    if (!ok) ++failures;
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << what << std::endl;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<Image> random_images(Rng& rng, std::size_t n, const ImageShape& s) {
    std::vector<Image> out(n, Image(s.channels, s.height, s.width));
    for (auto& im : out)
        for (float& p : im.pixels) p = static_cast<float>(rng.uniform());
    return out;
}

void gradient_suite() {
    const double start = cpu_seconds();
    const auto results = testkit::gradient_suite(100, 2024);
    const double elapsed = cpu_seconds() - start;
    bool ok = elapsed < 120.0;
    std::string worst;
    for (const auto& r : results) {
        ok = ok && r.passed() && r.cases >= 100;
        if (!r.passed()) worst += " " + r.op + "=" + fmt(r.worst);
    }
    report(1, ok,
           std::to_string(results.size()) + " ops x 100 cases, cpu " + fmt(elapsed) + "s" +
               (worst.empty() ? ", all within tolerance" : ", over tolerance:" + worst));
}

void parameter_accounting() {
    const ModelConfig c = ModelConfig::cifar();
    const TaskParamLedger l = count_task_params(c, 15, 10);
    Backbone<float> bb(c, 0);
    bb.freeze();
    const auto adapter = init_adapter(bb, 2, {10, 11, 12, 13, 14, 15, 16, 17, 18, 19}, 15);
    const std::size_t enumerated = adapter.parameter_count();
    const bool ok = l.total == 25755 && enumerated == l.total && std::lround(l.total / 1000.0) == 26;
    report(2, ok, "ledger " + std::to_string(l.total) + ", enumerated " + std::to_string(enumerated) + ", ~" +
                      std::to_string(std::lround(l.total / 1000.0)) + "k per task");
}

void convolution_oracle() {
    Rng rng(55);
    double worst = 0.0;
    bool modes_exact = true;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t r = 2 + rng.uniform_index(7), c = 2 + rng.uniform_index(7);
        const std::size_t k = 1 + 2 * rng.uniform_index(std::min(r, c) + 1);
        std::vector<double> w(r * c), f(k * k);
        for (double& v : w) v = rng.normal();
        for (double& v : f) v = rng.normal();
        const double alpha = rng.normal(0.0, 2.0);
        const auto conv = testkit::conv_same_oracle(w, r, c, f, k);
        const Tensor<double> W({r, c}, w), F({k, k}, f), A = Tensor<double>::scalar(alpha);
        const auto learn = adapt_weight(W, F, A, GateMode::learnable);
        const auto off = adapt_weight(W, F, A, GateMode::off);
        const auto on = adapt_weight(W, F, A, GateMode::always_on);
        const double gate = 1.0 / (1.0 + std::exp(-alpha));
        for (std::size_t i = 0; i < w.size(); ++i) {
            worst = std::max(worst, std::abs(learn.data()[i] - (conv[i] + gate * w[i])));
            modes_exact = modes_exact && off.data()[i] == conv[i] && on.data()[i] == conv[i] + w[i];
        }
    }
    report(5, worst <= 1e-6 && modes_exact,
           "200 cases, max |W'' - oracle| = " + fmt(worst) + (modes_exact ? ", gate off/on exact" : ", gate modes differ"));
}

void inference_battery() {
    const auto honest = testkit::inference_battery(false, 40, 7);
    const auto adversarial = testkit::inference_battery(true, 40, 7);
    const double b1 = double(honest.correct_beta1) / double(honest.images);
    const double b1_adv = double(adversarial.correct_beta1) / double(adversarial.images);
    const double b0_adv = double(adversarial.correct_beta0) / double(adversarial.images);
    const bool labels = honest.label_agreement == honest.correct_beta1 &&
                        adversarial.label_agreement == adversarial.correct_beta1;
    report(7, b1 == 1.0 && b1_adv == 1.0 && b0_adv <= 0.5 && labels,
           "beta=1 task accuracy " + fmt(b1) + " / " + fmt(b1_adv) + " (adversarial), beta=0 adversarial " +
               fmt(b0_adv) + (labels ? ", CIL label = TIL label when task is right" : ", label mismatch"));
}

void closed_forms() {
    const std::vector<double> uniform(10, 0.1);
    const double h = entropy(uniform);
    const double a = average_accuracy(std::vector<double>{0.8, 0.6});
    const LrSchedule s;
    const double start = lr_schedule(0.0, s);
    const double end = cosine_annealing(s.restart_period, s.restart_period, s.lr_max, s.lr_min);
    const double restart = lr_schedule(s.restart_period, s);
    const bool ok = std::abs(h - std::log(10.0)) <= 1e-9 && a == 0.7 && std::abs(start - s.lr_max) <= 1e-12 &&
                    std::abs(end - s.lr_min) <= 1e-12 && std::abs(restart - s.lr_max) <= 1e-12;
    report(9, ok, "H(uniform10)=" + fmt(h) + ", A([0.8,0.6])=" + fmt(a) + ", lr(0)=" + fmt(start) +
                      ", lr(cycle end)=" + fmt(end));
}

// Criteria 3, 4, 6, 8, 10 and 11 share one desk-scale continual run.
void continual_run() {
    const auto wall_start = std::chrono::steady_clock::now();
    const double cpu_start = cpu_seconds();

    RunConfig config = RunConfig::tiny();
    const ContinualData data = load_continual_data(config, "");
    const std::size_t tasks = config.data.num_tasks;
    std::vector<TaskData> tests;
    for (std::size_t t = 0; t < tasks; ++t) tests.push_back(data.test_task(t));

    Backbone<float> backbone(config.model, config.seed);
    TrainConfig tc = config.train;
    tc.seed = config.seed;
    train_base(backbone, data.train_task(0), tc);
    const std::uint64_t digest_after_1 = backbone.digest();
    const auto task1_before = TaskModel<float>::from_base(backbone).predict_proba(tests[0].images);

    std::vector<TaskAdapter<float>> adapters;
    bool immutable_after_3 = false;
    for (std::size_t t = 1; t < tasks; ++t) {
        const TaskData train = data.train_task(t);
        const int id = static_cast<int>(t + 1);
        adapters.push_back(init_adapter(backbone, id, train.classes, config.kernel_size, config.gate_mode,
                                        config.seed + static_cast<std::uint64_t>(id)));
        tc.seed = config.seed + static_cast<std::uint64_t>(id);
        train_task(backbone, adapters.back(), train, tc);
        if (t == 2) {
            immutable_after_3 = backbone.digest() == digest_after_1 &&
                                TaskModel<float>::from_base(backbone).predict_proba(tests[0].images) == task1_before;
        }
    }
    const bool immutable_final = backbone.digest() == digest_after_1 &&
                                 TaskModel<float>::from_base(backbone).predict_proba(tests[0].images) == task1_before;
    report(3, immutable_after_3 && immutable_final,
           std::string("backbone digest and task-1 predictions ") +
               (immutable_after_3 && immutable_final ? "bit-identical after tasks 3 and 5" : "changed"));

    {
        Rng rng(4);
        const auto fresh = init_adapter(backbone, 9, {0, 1}, config.kernel_size, config.gate_mode, 1);
        const auto images = random_images(rng, 100, config.model.image);
        const auto fa = materialize(backbone, fresh).features(images);
        const auto fb = TaskModel<float>::from_base(backbone).features(images);
        double worst = 0.0;
        for (std::size_t i = 0; i < fa.numel(); ++i)
            worst = std::max(worst, double(std::abs(fa.data()[i] - fb.data()[i])));
        report(4, worst <= 1e-6, "100 inputs, max |pooled feature diff| = " + fmt(worst));
    }

    InferenceConfig inference = config.inference;
    inference.seed = config.seed;
    const EvalReport til = evaluate(backbone, adapters, tests, EvalMode::til, inference);
    const EvalReport cil = evaluate(backbone, adapters, tests, EvalMode::cil, inference);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    const double cpu = cpu_seconds() - cpu_start;
    report(6, til.final_average() >= 0.90 && wall <= 1800.0 && cpu <= 1800.0,
           "TIL A_5 = " + fmt(til.final_average()) + ", wall " + fmt(wall) + "s, cpu " + fmt(cpu) + "s");

    bool dominated = true;
    for (std::size_t s = 0; s < til.stages(); ++s) {
        dominated = dominated && cil.average(s) <= til.average(s);
        for (std::size_t t = 0; t <= s; ++t) dominated = dominated && cil.a[s][t] <= til.a[s][t];
    }
    std::string stages;
    for (std::size_t s = 0; s < cil.stages(); ++s) stages += (s ? " " : "") + fmt(cil.average(s));
    report(8, dominated && cil.final_average() >= 0.70,
           "CIL A_5 = " + fmt(cil.final_average()) + " (per stage: " + stages + "), CIL <= TIL " +
               (dominated ? "everywhere" : "violated"));

    {
        const fs::path dir = fs::temp_directory_path() / "contracon_acceptance";
        fs::create_directories(dir);
        save_backbone(backbone, dir / "base1.ckpt", to_text(config));
        save_backbone(load_backbone(dir / "base1.ckpt"), dir / "base2.ckpt", to_text(config));
        save_adapter(adapters.back(), dir / "ad1.ckpt");
        save_adapter(load_adapter(dir / "ad1.ckpt", backbone), dir / "ad2.ckpt");
        const bool base_same = slurp(dir / "base1.ckpt") == slurp(dir / "base2.ckpt");
        const bool adapter_same = slurp(dir / "ad1.ckpt") == slurp(dir / "ad2.ckpt");
        fs::remove_all(dir);
        report(10, base_same && adapter_same,
               std::string("save-load-save base ") + (base_same ? "identical" : "differs") + ", adapter " +
                   (adapter_same ? "identical" : "differs"));
    }

    {
        std::vector<TaskData> train3, test3;
        for (std::size_t t = 0; t < 3; ++t) {
            train3.push_back(data.train_task(t));
            test3.push_back(tests[t]);
        }
        TrainConfig naive_tc = config.train;
        const auto naive = naive_finetune(config.model, train3, test3, naive_tc, config.seed);
        const double before = naive[0][0], after = naive[2][0];
        bool preserved = true;
        for (std::size_t s = 0; s < til.stages(); ++s) preserved = preserved && til.a[s][0] == til.a[0][0];
        report(11, after < before && preserved,
               "naive task-1 accuracy " + fmt(before) + " -> " + fmt(after) + " after task 3; ConTraCon task-1 TIL " +
                   fmt(til.a[0][0]) + (preserved ? " at every stage" : " changed"));
    }
}

}  // namespace

int main() {
    try {
        gradient_suite();
        parameter_accounting();
        convolution_oracle();
        inference_battery();
        closed_forms();
        continual_run();
    } catch (const std::exception& e) {
        std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
        return 1;
    }
    std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
    return failures ? 1 : 0;
}

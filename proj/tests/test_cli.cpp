#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* env = std::getenv("FLOWGUIDE_CLI");
    REQUIRE_MESSAGE(env != nullptr, "FLOWGUIDE_CLI must point at the flowguide binary");
    return env;
}

struct CliResult {
    int exit_code;
    std::string output;
};

CliResult run_cli(const std::string& args, const std::string& extra_env = "") {
    static int counter = 0;
    const fs::path out = fs::temp_directory_path() /
                         ("fg_cli_out_" + std::to_string(counter++) + ".txt");
    std::string cmd = extra_env + " " + cli_path() + " " + args + " > " +
                      out.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WEXITSTATUS(raw);
    std::ifstream is(out);
    std::stringstream ss;
    ss << is.rdbuf();
    r.output = ss.str();
    fs::remove(out);
    return r;
}

fs::path sandbox() {
    const fs::path dir = fs::temp_directory_path() / "fg_cli_tests";
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream os(p);
    os << content;
}

std::string smoke_config(const fs::path& dir, unsigned seed = 7) {
    std::ostringstream os;
    os << R"({
  "seed": )" << seed << R"(,
  "output_dir": ")" << (dir / "run").string() << R"(",
  "threads": 2,
  "data": {
    "source": {"kind": "eight_gaussians", "radius": 2.0, "sigma": 0.1},
    "target": {"kind": "moons", "noise": 0.05}
  },
  "model": {"hidden": [32, 32], "activation": "tanh", "time_embedding": 16},
  "train": {"steps": 200, "batch": 128, "lr": 0.002},
  "sampler": {"steps": 40, "method": "euler", "t_eps": 0.0001},
  "energy": {"kind": "linear", "c": [0.8, 0.0], "scale": 1.0},
  "guidance": [
    {"method": "none"},
    {"method": "mc", "n_samples": 500, "sigma_mc": 0.08}
  ],
  "eval": {"n_eval": 128, "w2_repetitions": 4, "tilted_pool": 3000, "trajectories": 6},
  "sweep": {"n_grid": [5, 50]}
})";
    const fs::path p = dir / "config.json";
    write_file(p, os.str());
    return p.string();
}

// payload = file content with comment lines stripped (hash line embeds the
// output_dir, which differs between runs by design)
std::string csv_payload(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream out;
    std::string line;
    while (std::getline(is, line))
        if (line.empty() || line[0] != '#') out << line << "\n";
    return out.str();
}

// minimal XML well-formedness scan: tags balance, no stray '<'
bool xml_well_formed(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string s = ss.str();
    std::vector<std::string> stack;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] != '<') {
            ++i;
            continue;
        }
        const std::size_t end = s.find('>', i);
        if (end == std::string::npos) return false;
        std::string tag = s.substr(i + 1, end - i - 1);
        i = end + 1;
        if (tag.empty()) return false;
        if (tag[0] == '?' || tag[0] == '!') continue;
        const bool closing = tag[0] == '/';
        const bool self_closing = tag.back() == '/';
        std::string name = tag.substr(closing ? 1 : 0);
        name = name.substr(0, name.find_first_of(" \t\n/"));
        if (closing) {
            if (stack.empty() || stack.back() != name) return false;
            stack.pop_back();
        } else if (!self_closing) {
            stack.push_back(name);
        }
    }
    return stack.empty();
}

}  // namespace

TEST_CASE("validation: missing required key names the key, exit code 2") {
    const fs::path dir = sandbox() / "missing_target";
    fs::create_directories(dir);
    write_file(dir / "bad.json", R"({"data": {"coupling": "independent"}})");
    CliResult r = run_cli("train -c " + (dir / "bad.json").string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("target") != std::string::npos);
}

TEST_CASE("validation: unknown keys are rejected by name") {
    const fs::path dir = sandbox() / "unknown_key";
    fs::create_directories(dir);
    write_file(dir / "bad.json",
               R"({"data": {"target": {"kind": "moons", "noise": 0.05}}, "trainn": {}})");
    CliResult r = run_cli("train -c " + (dir / "bad.json").string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("trainn") != std::string::npos);
}

TEST_CASE("validation: unknown guidance method id") {
    const fs::path dir = sandbox() / "bad_method";
    fs::create_directories(dir);
    write_file(dir / "bad.json",
               R"({"data": {"target": {"kind": "moons", "noise": 0.05}},
                   "guidance": [{"method": "warp"}]})");
    CliResult r = run_cli("train -c " + (dir / "bad.json").string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("warp") != std::string::npos);
}

TEST_CASE("smoke train writes every artifact and reruns identically") {
    const fs::path dir = sandbox() / "smoke";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cfg = smoke_config(dir);

    CliResult r = run_cli("train -c " + cfg);
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(dir / "run" / "checkpoint.bin"));
    CHECK(fs::exists(dir / "run" / "loss_curve.csv"));
    CHECK(fs::exists(dir / "run" / "manifest.json"));
    CHECK(fs::exists(dir / "run" / "resolved_config.json"));

    const std::string first = csv_payload(dir / "run" / "loss_curve.csv");
    CliResult r2 = run_cli("train -c " + cfg + " -o " + (dir / "run2").string());
    REQUIRE(r2.exit_code == 0);
    CHECK(first == csv_payload(dir / "run2" / "loss_curve.csv"));
}

TEST_CASE("guide: method none matches the sample command") {
    const fs::path dir = sandbox() / "smoke";
    const std::string cfg = smoke_config(dir);
    if (!fs::exists(dir / "run" / "checkpoint.bin"))
        REQUIRE(run_cli("train -c " + cfg).exit_code == 0);
    const std::string ckpt = (dir / "run" / "checkpoint.bin").string();

    REQUIRE(run_cli("sample -c " + cfg + " -k " + ckpt + " -o " +
                    (dir / "out_sample").string())
                .exit_code == 0);
    REQUIRE(run_cli("guide -c " + cfg + " -k " + ckpt + " -o " +
                    (dir / "out_guide").string())
                .exit_code == 0);

    CHECK(csv_payload(dir / "out_sample" / "samples.csv") ==
          csv_payload(dir / "out_guide" / "samples_none.csv"));
}

TEST_CASE("guide: svg is well-formed XML with one polyline per trajectory") {
    const fs::path dir = sandbox() / "smoke";
    const fs::path svg = dir / "out_guide" / "scatter_mc.svg";
    REQUIRE(fs::exists(svg));
    CHECK(xml_well_formed(svg));
    std::ifstream is(svg);
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string s = ss.str();
    std::size_t count = 0, pos = 0;
    while ((pos = s.find("<polyline", pos)) != std::string::npos) {
        ++count;
        pos += 1;
    }
    CHECK(count == 6);  // eval.trajectories = 6
}

TEST_CASE("guide reruns bit-identically regardless of thread count") {
    const fs::path dir = sandbox() / "smoke";
    const std::string cfg = smoke_config(dir);
    const std::string ckpt = (dir / "run" / "checkpoint.bin").string();

    REQUIRE(run_cli("guide -c " + cfg + " -k " + ckpt + " --threads 1 -o " +
                    (dir / "g1").string())
                .exit_code == 0);
    REQUIRE(run_cli("guide -c " + cfg + " -k " + ckpt + " --threads 4 -o " +
                    (dir / "g4").string())
                .exit_code == 0);
    for (const char* name : {"samples_mc.csv", "trajectories_mc.csv",
                             "diagnostics_mc.csv", "samples_none.csv"}) {
        CHECK(csv_payload(dir / "g1" / name) == csv_payload(dir / "g4" / name));
    }
}

TEST_CASE("eval-w2: samples against themselves give zero") {
    const fs::path dir = sandbox() / "smoke";
    const fs::path samples = dir / "out_guide" / "samples_mc.csv";
    REQUIRE(fs::exists(samples));
    CliResult r = run_cli("eval-w2 -c " + smoke_config(dir) + " --samples " +
                          samples.string() + " --reference file --reference-samples " +
                          samples.string() + " -o " + (dir / "w2self").string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("median 0.000000") != std::string::npos);
}

TEST_CASE("eval-w2: row count equals the repetition count") {
    const fs::path dir = sandbox() / "smoke";
    const fs::path samples = dir / "out_guide" / "samples_mc.csv";
    CliResult r = run_cli("eval-w2 -c " + smoke_config(dir) + " --samples " +
                          samples.string() + " -o " + (dir / "w2rep").string());
    REQUIRE(r.exit_code == 0);
    std::istringstream rows(csv_payload(dir / "w2rep" / "w2.csv"));
    std::string line;
    int count = -1;  // header
    while (std::getline(rows, line))
        if (!line.empty()) ++count;
    CHECK(count == 4);  // eval.w2_repetitions = 4
}

TEST_CASE("asymptotic sweep always carries the baseline row") {
    const fs::path dir = sandbox() / "smoke";
    const std::string cfg = smoke_config(dir);
    const std::string ckpt = (dir / "run" / "checkpoint.bin").string();
    CliResult r = run_cli("asymptotic-sweep -c " + cfg + " -k " + ckpt + " -o " +
                          (dir / "sweep").string());
    REQUIRE(r.exit_code == 0);
    const std::string payload = csv_payload(dir / "sweep" / "asymptotic_sweep.csv");
    CHECK(payload.find("baseline,0,") != std::string::npos);
    CHECK(payload.find("mc,5,") != std::string::npos);
    CHECK(payload.find("mc,50,") != std::string::npos);
    CHECK(fs::exists(dir / "sweep" / "asymptotic_sweep.svg"));
    CHECK(xml_well_formed(dir / "sweep" / "asymptotic_sweep.svg"));
}

TEST_CASE("FLOWGUIDE_SEED overrides the config seed") {
    const fs::path dir = sandbox() / "seed_env";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cfg = smoke_config(dir);
    REQUIRE(run_cli("train -c " + cfg + " -o " + (dir / "a").string()).exit_code == 0);
    REQUIRE(run_cli("train -c " + cfg + " -o " + (dir / "b").string(),
                    "FLOWGUIDE_SEED=99")
                .exit_code == 0);
    CHECK(csv_payload(dir / "a" / "loss_curve.csv") !=
          csv_payload(dir / "b" / "loss_curve.csv"));
}

TEST_CASE("oracle-check passes clean and fails exactly the mutated identities") {
    const fs::path dir = sandbox() / "oracle";
    CliResult clean = run_cli("oracle-check -o " + (dir / "clean").string());
    CHECK(clean.exit_code == 0);

    // at least 12 identity checks in the report
    std::istringstream rows(csv_payload(dir / "clean" / "oracle_check.csv"));
    std::string line;
    int checks = -1;
    while (std::getline(rows, line))
        if (!line.empty()) ++checks;
    CHECK(checks >= 12);

    CliResult mutated = run_cli("oracle-check --mutate cov-g-sign -o " +
                                (dir / "mutated").string());
    CHECK(mutated.exit_code == 3);
    std::istringstream mrows(csv_payload(dir / "mutated" / "oracle_check.csv"));
    std::getline(mrows, line);  // header
    while (std::getline(mrows, line)) {
        if (line.empty()) continue;
        const bool failed =
            line.size() >= 2 && line.compare(line.size() - 2, 2, ",0") == 0;
        const bool is_prop2_g = line.find("cov_g_") == 0;
        CHECK(failed == is_prop2_g);
    }
}

TEST_CASE("train-guidance emits per-kind artifacts; mrgm omits the z checkpoint") {
    const fs::path dir = sandbox() / "smoke";
    const std::string cfg = smoke_config(dir);
    const std::string ckpt = (dir / "run" / "checkpoint.bin").string();
    CliResult r = run_cli(
        "train-guidance -c " + cfg + " -k " + ckpt + " -o " + (dir / "tg").string() +
        " --set guidance_training.steps=60"
        " --set 'guidance_training.kinds=[\"gm\",\"vgm\",\"rgm\",\"mrgm\"]'"
        " --set 'guidance_training.z_hidden=[16]'"
        " --set 'guidance_training.g_hidden=[16]'");
    REQUIRE(r.exit_code == 0);
    for (const char* kind : {"gm", "vgm", "rgm", "mrgm"}) {
        CHECK(fs::exists(dir / "tg" / ("g_" + std::string(kind) + ".bin")));
        CHECK(fs::exists(dir / "tg" / ("g_loss_" + std::string(kind) + ".csv")));
    }
    CHECK(fs::exists(dir / "tg" / "z_gm.bin"));
    CHECK(!fs::exists(dir / "tg" / "z_mrgm.bin"));
}

TEST_CASE("guide runs every method family on one checkpoint in one invocation") {
    const fs::path dir = sandbox() / "all_methods";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string base_cfg = smoke_config(dir);
    REQUIRE(run_cli("train -c " + base_cfg).exit_code == 0);
    const std::string ckpt = (dir / "run" / "checkpoint.bin").string();

    // train small guidance nets for the model-backed methods
    REQUIRE(run_cli("train-guidance -c " + base_cfg + " -k " + ckpt + " -o " +
                    (dir / "tg").string() +
                    " --set guidance_training.steps=60"
                    " --set 'guidance_training.z_hidden=[16]'"
                    " --set 'guidance_training.g_hidden=[16]'")
                .exit_code == 0);
    // and a covariance model checkpoint via the core API format: reuse z as a
    // stand-in is not allowed (role differs), so train one here through the
    // CLI-facing config is not provided; cov_l is exercised at the API level.

    std::ostringstream cfg;
    cfg << R"({
  "seed": 7,
  "output_dir": ")" << (dir / "run_all").string() << R"(",
  "threads": 2,
  "data": {
    "source": {"kind": "eight_gaussians", "radius": 2.0, "sigma": 0.1},
    "target": {"kind": "moons", "noise": 0.05}
  },
  "model": {"hidden": [32, 32], "activation": "tanh", "time_embedding": 16},
  "sampler": {"steps": 30, "method": "euler", "t_eps": 0.0001},
  "energy": {"kind": "linear", "c": [0.8, 0.0], "scale": 1.0},
  "guidance": [
    {"method": "none"},
    {"method": "mc", "n_samples": 300},
    {"method": "mc_x1", "n_samples": 300},
    {"method": "cov_a", "lambda": {"shape": "linear_decay", "scale": 0.5}},
    {"method": "cov_g"},
    {"method": "sim_mc", "n_samples": 100, "posterior_std": 0.2},
    {"method": "diff_logz", "model_path": ")" << (dir / "tg" / "z_gm.bin").string() << R"("},
    {"method": "learned", "model_path": ")" << (dir / "tg" / "g_gm.bin").string() << R"("}
  ],
  "eval": {"n_eval": 64, "trajectories": 2}
})";
    write_file(dir / "all.json", cfg.str());
    CliResult r = run_cli("guide -c " + (dir / "all.json").string() + " -k " + ckpt);
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    for (const char* m : {"none", "mc", "mc_x1", "cov_a", "cov_g", "sim_mc",
                          "diff_logz", "learned"})
        CHECK(fs::exists(dir / "run_all" / ("samples_" + std::string(m) + ".csv")));
}

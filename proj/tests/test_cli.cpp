#include "doctest.h"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "chaosib/pendulum.hpp"
#include "chaosib/trainer.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace chaosib;

namespace {

struct CommandResult {
    int exit_code = -1;
    std::string output;  ///< stdout + stderr
};

CommandResult run_cli(const std::string& args) {
    const std::string cmd = std::string(CHAOSIB_CLI_PATH) + " " + args + " 2>&1";
    std::array<char, 4096> buf{};
    CommandResult result;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (std::fgets(buf.data(), buf.size(), pipe)) result.output += buf.data();
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

fs::path work_dir() {
    const auto dir = fs::temp_directory_path() / "chaosib_test_cli";
    fs::create_directories(dir);
    return dir;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

const std::string kTinyModelFlags =
    " --batch 64 --encoder-widths 16 --shared-widths 16 --future-widths 16"
    " --pe-frequencies 1 2 --bottleneck-dim 4 --shared-dim 8 --eval-every 10";

/// Shared short dataset: 6 trajectories, 500 states each.
fs::path tiny_dataset() {
    static const fs::path path = [] {
        const auto p = work_dir() / "tiny.bin";
        auto r = run_cli("simulate --trajectories 6 --t-total 12 --burn-in 2 --seed 7 --out "
                         + q(p));
        REQUIRE(r.exit_code == 0);
        return p;
    }();
    return path;
}

}  // namespace

TEST_CASE("help enumerates subcommands, exit 0") {
    auto r = run_cli("--help");
    CHECK(r.exit_code == 0);
    for (const char* word : {"simulate", "train", "sweep", "analyze", "plot"}) {
        CHECK(r.output.find(word) != std::string::npos);
    }
    auto rs = run_cli("simulate --help");
    CHECK(rs.exit_code == 0);
    CHECK(rs.output.find("--energy-over-g") != std::string::npos);
    auto rt = run_cli("train --help");
    const bool shows_beta_init = rt.output.find("5e-04") != std::string::npos
                                 || rt.output.find("0.0005") != std::string::npos;
    CHECK(shows_beta_init);
    CHECK(rt.output.find("50000") != std::string::npos);
}

TEST_CASE("simulate: usage errors exit 2, bad config exits 1") {
    auto r = run_cli("simulate");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("--out") != std::string::npos);

    auto bad = run_cli("simulate --l1 -1 --trajectories 1 --out "
                       + q(work_dir() / "bad.bin"));
    CHECK(bad.exit_code == 1);

    auto unknown = run_cli("simulate --no-such-flag 1 --out x.bin");
    CHECK(unknown.exit_code == 2);
}

TEST_CASE("simulate: determinism and expected shape") {
    const auto a = work_dir() / "det_a.bin";
    const auto b = work_dir() / "det_b.bin";
    auto ra = run_cli("simulate --trajectories 2 --t-total 11 --burn-in 1 --seed 3 --json --out "
                      + q(a));
    auto rb = run_cli("simulate --trajectories 2 --t-total 11 --burn-in 1 --seed 3 --json --out "
                      + q(b));
    REQUIRE(ra.exit_code == 0);
    REQUIRE(rb.exit_code == 0);
    auto hash_field = [](const std::string& text) {
        const auto pos = text.find("\"hash\":");
        REQUIRE(pos != std::string::npos);
        return text.substr(pos, text.find(',', pos) - pos);
    };
    CHECK(hash_field(ra.output) == hash_field(rb.output));
    CHECK(ra.output.find("\"states_per_trajectory\":500") != std::string::npos);

    const Dataset da = load_dataset(a.string());
    const Dataset db = load_dataset(b.string());
    CHECK(dataset_content_hash(da) == dataset_content_hash(db));
    CHECK(da.trajectories[0].states.size() == 500);
}

TEST_CASE("simulate: config file values with flag override") {
    const auto cfg_path = work_dir() / "sim.json";
    {
        std::ofstream cfg(cfg_path);
        cfg << R"({"trajectories": 2, "t_total": 11.0, "burn_in": 1.0, "seed": 3})";
    }
    const auto out = work_dir() / "from_cfg.bin";
    auto r = run_cli("simulate --config " + q(cfg_path) + " --seed 4 --out " + q(out));
    REQUIRE(r.exit_code == 0);
    const Dataset d = load_dataset(out.string());
    CHECK(d.n_trajectories() == 2);          // from config file
    CHECK(d.seed == 4);                       // flag wins over config
    CHECK(d.trajectories[0].states.size() == 500);
}

TEST_CASE("train --steps 0 writes manifest, init checkpoint, empty log") {
    const auto data = tiny_dataset();
    const auto out_dir = work_dir() / "train_zero";
    fs::remove_all(out_dir);
    auto r = run_cli("train --data " + q(data) + " --delta 0.02 --steps 0" + kTinyModelFlags
                     + " --out-dir " + q(out_dir));
    REQUIRE(r.exit_code == 0);
    const auto run_dir = out_dir / "ib_d0.020_s0_seed0";
    CHECK(fs::exists(run_dir / "final.ckpt"));
    CHECK(fs::exists(run_dir / "manifest.json"));
    auto log = read_runlog_csv((run_dir / "log.csv").string());
    CHECK(log.points.empty());
}

TEST_CASE("sweep completes then skips on rerun; missing dataset fails nonzero") {
    const auto data = tiny_dataset();
    const auto out_dir = work_dir() / "sweep";
    fs::remove_all(out_dir);
    const std::string cmd = "sweep --data " + q(data)
                            + " --deltas 0.02 --seeds 0 1 --steps 10" + kTinyModelFlags
                            + " --threads 1 --out-dir " + q(out_dir);
    auto first = run_cli(cmd);
    REQUIRE(first.exit_code == 0);
    CHECK(first.output.find("completed ib_d0.020_s0_seed0") != std::string::npos);
    CHECK(first.output.find("completed ib_d0.020_s0_seed1") != std::string::npos);

    auto second = run_cli(cmd);
    CHECK(second.exit_code == 0);
    CHECK(second.output.find("skipped") != std::string::npos);
    CHECK(second.output.find("completed") == std::string::npos);

    auto bad = run_cli("sweep --data " + q(work_dir() / "missing.bin")
                       + " --deltas 0.02 --seeds 0 --steps 10" + kTinyModelFlags
                       + " --threads 1 --out-dir " + q(out_dir));
    CHECK(bad.exit_code == 1);
    CHECK(bad.output.find("failed") != std::string::npos);
}

TEST_CASE("analyze allocation on an IB log names the DIB requirement") {
    const auto data = tiny_dataset();
    const auto out_dir = work_dir() / "alloc_ib";
    fs::remove_all(out_dir);
    auto t = run_cli("train --data " + q(data) + " --delta 0.02 --steps 10" + kTinyModelFlags
                     + " --out-dir " + q(out_dir));
    REQUIRE(t.exit_code == 0);
    auto r = run_cli("analyze allocation --run " + q(out_dir / "ib_d0.020_s0_seed0")
                     + " --out-prefix " + q(out_dir / "alloc"));
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("DIB") != std::string::npos);
}

TEST_CASE("analyze and plot produce well-formed artifacts") {
    const auto data = tiny_dataset();
    const auto out_dir = work_dir() / "artifacts";
    fs::remove_all(out_dir);
    auto t = run_cli("train --data " + q(data) + " --mode dib --delta 0.02 --steps 20"
                     + kTinyModelFlags + " --out-dir " + q(out_dir));
    REQUIRE(t.exit_code == 0);
    const auto run_dir = out_dir / "dib_d0.020_s0_seed0";

    auto ip = run_cli("plot infoplane --runs " + q(out_dir) + " --out-prefix "
                      + q(out_dir / "ip"));
    CHECK(ip.exit_code == 0);
    {
        std::ifstream in(out_dir / "ip.svg");
        REQUIRE(in);
        std::stringstream ss;
        ss << in.rdbuf();
        CHECK(testutil::xml_well_formed(ss.str()));
    }
    CHECK(!fs::exists(out_dir / "ip.csv"));  // plot emits SVG only

    auto al = run_cli("analyze allocation --run " + q(run_dir) + " --out-prefix "
                      + q(out_dir / "alloc"));
    CHECK(al.exit_code == 0);
    CHECK(fs::exists(out_dir / "alloc.csv"));
    CHECK(fs::exists(out_dir / "alloc.svg"));

    auto ce = run_cli("analyze coembed --model " + q(run_dir / "final.ckpt") + " --data "
                      + q(data) + " --sample 100 --state \"0.5,0,-0.5,0\" --json --out-prefix "
                      + q(out_dir / "ce"));
    CHECK(ce.exit_code == 0);
    CHECK(ce.output.find("\"members\"") != std::string::npos);
    CHECK(fs::exists(out_dir / "ce.csv"));
    CHECK(fs::exists(out_dir / "ce.svg"));

    auto bad_state = run_cli("analyze coembed --model " + q(run_dir / "final.ckpt")
                             + " --data " + q(data) + " --sample 10 --state \"1,2\""
                             + " --out-prefix " + q(out_dir / "ce2"));
    CHECK(bad_state.exit_code == 1);
}

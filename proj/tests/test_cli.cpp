#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "psld/harness/cli.hpp"
#include "psld/score.hpp"

namespace fs = std::filesystem;
using namespace psld::harness;

namespace {

const fs::path kDir = fs::current_path() / "cli_out";

int run(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "psld");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return rc;
}

std::string path(const std::string& name) { return (kDir / name).string(); }

std::string slurp(const std::string& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> rows(const std::string& p) {
  std::ifstream f(p);
  std::string line;
  std::vector<std::vector<std::string>> out;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    out.push_back(cells);
  }
  return out;
}

void write(const std::string& p, const std::string& text) { std::ofstream(p) << text; }

struct Fresh {
  Fresh() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
  }
};

}  // namespace

TEST_CASE_FIXTURE(Fresh, "kernel-check writes the closed form against the ODE") {
  write(path("psld.cfg"), "gamma = 0.01\nmass_inv = 4\nbeta.kind = constant\nbeta.const = 8\n");
  REQUIRE(run({"kernel-check", "--config", path("psld.cfg"), "--out", path("k.csv")}) == 0);
  const auto r = rows(path("k.csv"));
  REQUIRE(r.size() == 51);
  CHECK(r[0].back() == "max_abs_err");
  for (std::size_t i = 1; i < r.size(); ++i) CHECK(std::stod(r[i].back()) <= 1e-6);
  CHECK(slurp(path("k.csv")).rfind("# seed=0 config_hash=", 0) == 0);
}

TEST_CASE_FIXTURE(Fresh, "sample is deterministic in the seed") {
  const std::vector<std::string> base{"sample", "--sampler", "em", "--nfe", "1000", "--n", "300"};
  auto a = base, b = base, c = base;
  a.insert(a.end(), {"--seed", "0", "--out", path("a.csv"), "--plot", path("a.svg")});
  b.insert(b.end(), {"--seed", "0", "--out", path("b.csv")});
  c.insert(c.end(), {"--seed", "1", "--out", path("c.csv")});
  REQUIRE(run(a) == 0);
  REQUIRE(run(b) == 0);
  REQUIRE(run(c) == 0);
  CHECK(slurp(path("a.csv")) == slurp(path("b.csv")));
  CHECK(slurp(path("a.csv")) != slurp(path("c.csv")));
  const auto r = rows(path("a.csv"));
  CHECK(r.size() == 301);
  CHECK(r[0] == std::vector<std::string>{"chain_id", "x1", "x2", "m1", "m2"});
  CHECK(slurp(path("a.svg")).find("<circle") != std::string::npos);

  for (const char* s : {"sscs", "ode"}) {
    REQUIRE(run({"sample", "--sampler", s, "--nfe", "50", "--n", "200", "--rtol", "1e-3",
                 "--out", path("s.csv"), "--metrics", path("m.csv")}) == 0);
    const auto m = rows(path("m.csv"));
    REQUIRE(m.size() == 2);
    CHECK(m[0][2] == "energy_dist");
  }
}

TEST_CASE_FIXTURE(Fresh, "exit codes") {
  std::string msg;
  CHECK(run({}, &msg) == 2);
  CHECK(run({"sample", "--no-such-flag"}, &msg) == 2);
  CHECK(run({"sample", "--sampler", "rk4"}, &msg) == 2);
  CHECK(run({"frobnicate"}, &msg) == 2);
  CHECK(run({"--help"}, &msg) == 0);
  CHECK(msg.find("kernel-check") != std::string::npos);

  write(path("bad.cfg"), "gamma = 0.01\nunknown.key = 3\n");
  CHECK(run({"sample", "--config", path("bad.cfg"), "--out", path("x.csv")}, &msg) == 2);
  CHECK(msg.find("line 2") != std::string::npos);
  write(path("neg.cfg"), "gamma = -0.5\n");
  CHECK(run({"kernel-check", "--config", path("neg.cfg"), "--out", path("x.csv")}) == 2);
  write(path("dim.cfg"), "dim = 3\n");
  CHECK(run({"sample", "--config", path("dim.cfg"), "--out", path("x.csv")}) == 2);

  // a model whose output overflows: the sampler reports a numeric failure
  psld::score::Mlp m = psld::score::make_score_model(2, 8, 1, 4);
  m.init(1, false);
  for (double& w : m.params()) w = 1e200;
  m.save_file(path("huge.ckpt"));
  CHECK(run({"sample", "--checkpoint", path("huge.ckpt"), "--nfe", "10", "--n", "10", "--out",
             path("x.csv")},
            &msg) == 3);
  write(path("junk.ckpt"), "not a checkpoint\n");
  CHECK(run({"sample", "--checkpoint", path("junk.ckpt"), "--out", path("x.csv")}) == 2);
}

TEST_CASE_FIXTURE(Fresh, "train then sample from the checkpoint") {
  write(path("t.cfg"), "train.iterations = 50\ntrain.batch = 32\nmodel.hidden = 16\n"
                       "model.freq = 4\ndata.n = 500\ntrain.log_every = 10\n");
  REQUIRE(run({"train", "--config", path("t.cfg"), "--out", path("log.csv"), "--model",
               path("m.ckpt")}) == 0);
  const auto log = rows(path("log.csv"));
  CHECK(log[0] == std::vector<std::string>{"iteration", "loss", "grad_norm", "wallclock"});
  CHECK(log.size() == 6);
  REQUIRE(run({"sample", "--config", path("t.cfg"), "--checkpoint", path("m.ckpt"), "--nfe",
               "20", "--n", "50", "--out", path("s.csv")}) == 0);
  CHECK(rows(path("s.csv")).size() == 51);
}

TEST_CASE_FIXTURE(Fresh, "stationarity, gamma-sweep and guide tables") {
  REQUIRE(run({"stationarity", "--out", path("st.csv")}) == 0);
  const auto st = rows(path("st.csv"));
  REQUIRE(st.size() == 5);
  for (int i = 1; i <= 3; ++i) CHECK(std::stod(st[i][2]) <= 1e-3);
  CHECK(st[4][0] == "corrupted");
  CHECK(std::stod(st[4][2]) > 0.1);

  REQUIRE(run({"gamma-sweep", "--nfe", "40", "--n", "300", "--out", path("g.csv")}) == 0);
  const auto g = rows(path("g.csv"));
  REQUIRE(g.size() == 6);
  CHECK(g[1][0] == "0");
  CHECK(g[5][0] == "0.25");
  for (std::size_t i = 1; i < g.size(); ++i)
    for (std::size_t j = 3; j < g[i].size(); ++j) CHECK(std::stod(g[i][j]) >= 0.0);

  REQUIRE(run({"guide", "--label", "1", "--weight", "5", "--nfe", "200", "--n", "300", "--out",
               path("gd.csv")}) == 0);
  const auto gd = rows(path("gd.csv"));
  CHECK(gd[0].back() == "label");
  int right = 0;
  for (std::size_t i = 1; i < gd.size(); ++i) right += std::stod(gd[i][1]) > 0;
  CHECK(right >= 297);

  write(path("gc.cfg"), "data.name = gauss-corr\n");
  REQUIRE(run({"guide", "--config", path("gc.cfg"), "--mask", "1,0", "--observed", "1,0",
               "--nfe", "50", "--n", "100", "--out", path("imp.csv")}) == 0);
  const auto imp = rows(path("imp.csv"));
  CHECK(imp[0].back() == "observed");
  CHECK(imp[1][1] == "1");
  CHECK(imp[1].back() == "1;0");
  CHECK(run({"guide", "--config", path("gc.cfg"), "--mask", "1,0", "--nfe", "5", "--n", "5",
             "--out", path("imp.csv")}) == 2);
}

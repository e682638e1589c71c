#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "amba/frontend.hpp"

using namespace amba;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("amba_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  static const struct Cleanup {
    ~Cleanup() { fs::remove_all(dir); }
  } cleanup;
  return dir;
}

Run run(const std::string& args) {
  const auto out = scratch() / "stdout.txt";
  const auto err = scratch() / "stderr.txt";
  const std::string cmd = std::string("\"") + AMBA_CLI_PATH + "\" " + args + " >\"" + out.string() +
                          "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  for (const auto& l : lines(text)) {
    const auto eq = l.find('=');
    if (eq != std::string::npos) kv[l.substr(0, eq)] = l.substr(eq + 1);
  }
  return kv;
}

// Eight noise clips (toy length: 64 frames at hop 320), one label each.
const fs::path& toy_manifest() {
  static const fs::path manifest = [] {
    const auto dir = scratch() / "clips";
    fs::create_directories(dir);
    std::ofstream m(dir / "train.csv");
    m << "path,labels\n";
    for (int k = 0; k < 8; ++k) {
      std::mt19937_64 g(100 + k);
      std::normal_distribution<float> nd(0.0f, 0.1f);
      AudioClip clip;
      clip.sample_rate = 32000;
      clip.samples.resize(64 * 320);
      for (auto& s : clip.samples) s = nd(g);
      const auto name = "clip" + std::to_string(k) + ".wav";
      write_wav(dir / name, clip);
      m << name << "," << k << "\n";
    }
    return dir / "train.csv";
  }();
  return manifest;
}

std::vector<std::string> data_rows(const std::string& log) {
  std::vector<std::string> rows;
  bool header = false;
  for (const auto& l : lines(log)) {
    if (l.rfind("step,", 0) == 0) {
      header = true;
      continue;
    }
    if (header && !l.empty() && l[0] != '#') rows.push_back(l);
  }
  return rows;
}

const std::string kToy = "--set variant=toy --set batch_size=4 --set warmup_steps=2 --set lr=1e-3 ";

}  // namespace

TEST_CASE("params breakdown sums to the total and respects the budget") {
  std::map<std::string, long long> totals;
  for (const std::string v : {"tiny", "micro", "nano"}) {
    const auto r = run("params --set variant=" + v);
    REQUIRE(r.code == 0);
    long long sum = 0;
    for (const auto& [k, val] : key_values(r.out)) {
      if (k == "patch_embed" || k == "head" || k.rfind("stage", 0) == 0) sum += std::stoll(val);
    }
    totals[v] = std::stoll(key_values(r.out).at("total"));
    CHECK(sum == totals[v]);
  }
  CHECK(std::abs(totals["nano"] - 5'200'000) <= 0.15 * 5'200'000);
  CHECK(totals["tiny"] > totals["micro"]);
  CHECK(totals["micro"] > totals["nano"]);
}

TEST_CASE("train smoke run writes checkpoints and an echoed log") {
  const auto out = scratch() / "smoke";
  const auto r = run("train " + kToy + "--set total_steps=4 --set eval_every=2 --seed 3 --manifest \"" +
                     toy_manifest().string() + "\" --out \"" + out.string() + "\"");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(out / "last.amba"));
  CHECK(fs::exists(out / "best.amba"));
  const auto log = slurp(out / "train.log");
  CHECK(log.find("# variant=toy\n") != std::string::npos);
  CHECK(log.find("# seed=3\n") != std::string::npos);
  CHECK(log.find("# batch_size=4\n") != std::string::npos);
  CHECK(data_rows(log).size() == 4);
  CHECK(lines(slurp(out / "eval.log")).size() == 2);

  // Same seed and inputs: same log.
  const auto again = scratch() / "smoke2";
  REQUIRE(run("train " + kToy + "--set total_steps=4 --set eval_every=2 --seed 3 --manifest \"" +
              toy_manifest().string() + "\" --out \"" + again.string() + "\"")
              .code == 0);
  CHECK(data_rows(slurp(again / "train.log")) == data_rows(log));
}

TEST_CASE("an out-of-range label fails with the row named") {
  const auto bad = toy_manifest().parent_path() / "bad.csv";
  std::ofstream(bad) << "path,labels\nclip0.wav,0\nclip1.wav,11\n";
  const auto r = run("train " + kToy + "--manifest \"" + bad.string() + "\" --out \"" +
                     (scratch() / "bad").string() + "\"");
  CHECK(r.code == 2);
  CHECK(r.err.find("line 3") != std::string::npos);
  CHECK(r.err.find("11") != std::string::npos);
}

TEST_CASE("resuming reproduces the uninterrupted run") {
  const auto full = scratch() / "full";
  const auto resumed = scratch() / "resumed";
  const std::string common = "train " + kToy + "--set total_steps=4 --set checkpoint_every=2 --seed 11 --manifest \"" +
                             toy_manifest().string() + "\" ";
  REQUIRE(run(common + "--out \"" + full.string() + "\"").code == 0);
  REQUIRE(fs::exists(full / "step_2.amba"));
  const auto r = run(common + "--checkpoint \"" + (full / "step_2.amba").string() + "\" --out \"" +
                     resumed.string() + "\"");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto a = data_rows(slurp(full / "train.log"));
  const auto b = data_rows(slurp(resumed / "train.log"));
  REQUIRE(a.size() == 4);
  REQUIRE(b.size() == 2);
  CHECK(b[0] == a[2]);
  CHECK(b[1] == a[3]);
}

TEST_CASE("eval after overfitting reports perfect ranking, identically twice") {
  const auto out = scratch() / "overfit";
  const auto t = run("train --set variant=toy --set cutmix_prob=0 --set warmup_steps=5 --set total_steps=80 "
                     "--set eval_every=20 --seed 5 --manifest \"" +
                     toy_manifest().string() + "\" --out \"" + out.string() + "\"");
  REQUIRE_MESSAGE(t.code == 0, t.err);
  const std::string ev = "eval --checkpoint \"" + (out / "best.amba").string() + "\" --manifest \"" +
                         toy_manifest().string() + "\" ";
  const auto r1 = run(ev + "--out \"" + (scratch() / "e1").string() + "\"");
  REQUIRE_MESSAGE(r1.code == 0, r1.err);
  CHECK(key_values(r1.out).at("mAP") == "1.000000");
  const auto r2 = run(ev + "--out \"" + (scratch() / "e2").string() + "\"");
  CHECK(r2.out == r1.out);
  CHECK(slurp(scratch() / "e1" / "report.txt") == slurp(scratch() / "e2" / "report.txt"));

  const auto single = run(ev + "--mode singlelabel");
  REQUIRE(single.code == 0);
  const auto kv = key_values(single.out);
  CHECK(kv.count("f1_micro") == 1);
  CHECK(kv.count("f1_macro") == 1);
  CHECK(kv.count("accuracy") == 1);
  CHECK(kv.at("f1_micro") == kv.at("accuracy"));

  const auto infer = run("infer --top 2 --checkpoint \"" + (out / "last.amba").string() + "\" \"" +
                         (toy_manifest().parent_path() / "clip3.wav").string() + "\"");
  REQUIRE(infer.code == 0);
  CHECK(infer.out.find("clip3.wav,3:") != std::string::npos);
}

TEST_CASE("gradcheck exit codes") {
  const auto ok = run("gradcheck --scope scan");
  CHECK(ok.code == 0);
  CHECK(ok.out.rfind("PASS scan", 0) == 0);
  const auto bad = run("gradcheck --scope scan --corrupt-adjoint");
  CHECK(bad.code == 3);
  CHECK(bad.out.rfind("FAIL scan", 0) == 0);

  const auto t0 = std::chrono::steady_clock::now();
  const auto model = run("gradcheck --scope model");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(model.code == 0);
  CHECK(secs < 60.0);
}

TEST_CASE("bench emits one row per length and rejects unsorted lists") {
  const auto one = run("bench --lengths 256 --repeats 1");
  REQUIRE(one.code == 0);
  const auto l = lines(one.out);
  REQUIRE(l.size() == 2);
  CHECK(l[0] == "L,scan_seconds,attention_seconds");
  CHECK(l[1].rfind("256,", 0) == 0);
  CHECK(lines(run("bench --lengths 128,256,512 --repeats 1").out).size() == 4);
  CHECK(run("bench --lengths 512,256").code == 1);
  CHECK(run("bench --lengths 256,abc").code == 1);
}

TEST_CASE("configuration and usage errors exit 1") {
  const auto cfg = scratch() / "broken.cfg";
  std::ofstream(cfg) << "variant=toy\n# fine\nbatch_size=four\n";
  const auto r = run("params --config \"" + cfg.string() + "\"");
  CHECK(r.code == 1);
  CHECK(r.err.find("broken.cfg:3") != std::string::npos);
  CHECK(run("params --set no_such_key=1").code == 1);
  CHECK(run("params --set variant=huge").code == 1);
  CHECK(run("").code == 1);
  CHECK(run("frobnicate").code == 1);
  CHECK(run("--help").code == 0);
}

TEST_CASE("a damaged checkpoint is a data error surfaced verbatim") {
  const auto junk = scratch() / "junk.amba";
  std::ofstream(junk, std::ios::binary) << "NOPE and some more bytes";
  const auto r = run("eval --checkpoint \"" + junk.string() + "\" --manifest \"" + toy_manifest().string() + "\"");
  CHECK(r.code == 2);
  CHECK(r.err.find("bad magic") != std::string::npos);
  CHECK(run("eval --checkpoint \"" + (scratch() / "absent.amba").string() + "\" --manifest \"" +
            toy_manifest().string() + "\"")
            .code == 2);
}

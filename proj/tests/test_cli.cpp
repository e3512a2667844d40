#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "pmn/scene.hpp"
#include "pmn/trace_io.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  std::string cmd = std::string(PMN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Overrides shrinking everything so CLI round-trips stay fast.
const char* kTiny =
    " --set scene.categories=3 --set scene.attributes=3 --set scene.relations=4"
    " --set scene.max_entities=4 --set scene.grid=3 --set scene.cat_width=8"
    " --set scene.att_width=6 --set scene.pos_width=8 --set model.hidden=12"
    " --set model.embed=8 --set model.penultimate=10 --set model.attn=8"
    " --set model.count_hidden=10 --set model.count_bins=4 --set model.cap_steps=4"
    " --set data.questions.obj=120 --set data.questions.att=120"
    " --set data.questions.rel=160 --set data.questions.cap=40"
    " --set data.questions.cnt=160 --set data.questions.qa=120"
    " --set train.epochs=1";

struct OutDir {
  fs::path dir;
  OutDir() : dir(fs::temp_directory_path() / ("pmn_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~OutDir() { fs::remove_all(dir); }
  std::string str() const { return dir.string(); }
};

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run("") == 1);
  CHECK(run("no-such-verb") == 1);
  OutDir out;
  CHECK(run("train --out " + out.str()) == 1);  // --task required
  CHECK(run("gen-data --out " + out.str() + " --set train.fraction=0") == 1);
  CHECK(run("gen-data --out " + out.str() + " --set data.unknown=1") == 1);
}

TEST_CASE("the full command surface runs end to end on a tiny world") {
  OutDir out;
  std::string o = " --out " + out.str() + kTiny;

  REQUIRE(run("gen-data" + o) == 0);
  CHECK(fs::exists(out.dir / "obj.train.jsonl"));
  CHECK(fs::exists(out.dir / "qa.eval.jsonl"));
  std::string manifest = slurp(out.dir / "manifest.txt");
  CHECK(manifest.find("command: gen-data") != std::string::npos);
  CHECK(manifest.find("config_hash:") != std::string::npos);
  CHECK(manifest.find("\"scene\"") != std::string::npos);

  REQUIRE(run("train --task obj" + o) == 0);
  CHECK(fs::exists(out.dir / "obj.ckpt"));
  REQUIRE(run("train --task att" + o) == 0);
  REQUIRE(run("train --task rel" + o) == 0);
  CHECK(fs::exists(out.dir / "metrics.rel.json"));

  REQUIRE(run("eval --task rel" + o) == 0);

  // Tracing a trained module writes a parseable document.
  REQUIRE(run("trace --task rel --question-id 2" + o) == 0);
  std::string doc = slurp(out.dir / "trace.json");
  auto trace = pmn::parse_trace(doc);
  CHECK(trace.module == "rel");
  CHECK_FALSE(trace.steps.empty());

  // Missing children are reported before any training work happens.
  OutDir empty;
  CHECK(run("train --task rel --out " + empty.str() + kTiny) == 1);
}

TEST_CASE("grad-check exits 0 below tolerance") {
  OutDir out;
  CHECK(run("grad-check --task rel --samples 1 --out " + out.str()) == 0);
}

TEST_CASE("a run is reproducible from its manifest alone") {
  OutDir first;
  REQUIRE(run("gen-data --task cnt --out " + first.str() + kTiny) == 0);

  // Extract the embedded config and replay without the original flags.
  std::string manifest = slurp(first.dir / "manifest.txt");
  auto pos = manifest.find("config: ");
  REQUIRE(pos != std::string::npos);
  std::string config = manifest.substr(pos + 8);
  while (!config.empty() && (config.back() == '\n' || config.back() == '\r'))
    config.pop_back();

  OutDir second;
  std::ofstream(second.dir / "replay.json") << config;
  REQUIRE(run("gen-data --task cnt --config " + (second.dir / "replay.json").string() +
              " --out " + second.str()) == 0);

  for (const char* split : {"cnt.train.jsonl", "cnt.eval.jsonl"}) {
    std::string a = slurp(first.dir / split);
    std::string b = slurp(second.dir / split);
    REQUIRE_FALSE(a.empty());
    CHECK(a == b);
  }
}

TEST_CASE("commands only write inside their output directory") {
  OutDir out;
  auto before = std::filesystem::current_path();
  REQUIRE(run("gen-data --task obj --out " + out.str() + kTiny) == 0);
  size_t stray = 0;
  for (const auto& e : fs::directory_iterator(before))
    if (e.path().filename().string().rfind("obj.", 0) == 0) ++stray;
  CHECK(stray == 0);
}

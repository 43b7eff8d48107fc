#include "langtail/cli.hpp"
#include "langtail/config.hpp"
#include "langtail/errors.hpp"
#include "langtail/io.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cstdlib>

using namespace langtail;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  setenv("LANGTAIL_LOG", "quiet", 1);
  args.insert(args.begin(), "langtail");
  return cli::run_command(args);
}

const char* kSmallSynth =
    "# tiny corpus\n"
    "out = corpus\n"
    "n_classes = 4\n"
    "points_per_scene = 200\n"
    "n_scenes = 3\n"
    "instance_points = 50\n"
    "embedding_dim = 32   # short text vectors\n";

std::vector<std::string> small_train(const fs::path& root, const std::string& out) {
  return {"train",           "--corpus",     (root / "corpus").string(), "--bank", (root / "corpus" / "bank").string(),
          "--out",           (root / out).string(), "--granularities", "12,8,4", "--hidden", "16",
          "--feature-dim",   "8",            "--epochs",      "2",          "--recluster-every", "1",
          "--warmup-epochs", "0",            "--entity-batch", "8",         "--align-steps", "30"};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config parsing") {
  config::RunConfig rc(config::synth_schema());
  rc.load_text("n_classes = 5  # comment\n\n# full line\nout = a/b\n", "/base", "t");
  CHECK(rc.get_size("n_classes") == 5);
  CHECK(rc.path("out") == fs::path("/base/a/b"));
  CHECK(rc.get_double("zipf_exponent") == 1.2);
  CHECK_THROWS_AS(rc.load_text("bogus = 1\n", "/", "t"), ConfigError);
  CHECK_THROWS_AS(rc.load_text("n_classes 5\n", "/", "t"), ConfigError);
  rc.set("n_classes", "five", "/");
  CHECK_THROWS_AS(rc.get_size("n_classes"), ConfigError);

  config::RunConfig tr(config::train_schema());
  CHECK(tr.get_sizes("granularities") == std::vector<std::size_t>{120, 80, 20});
  CHECK(tr.get_double("lambda") == 0.9);
  const auto cfg = config::train_config(tr);
  CHECK(cfg.granularities.levels == std::vector<std::size_t>{120, 80, 20});
  CHECK(cfg.lambda == 0.9);
  tr.set("unmatched", "keep", "/");
  CHECK_THROWS_AS(config::train_config(tr), ConfigError);
}

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}) == 1);
  CHECK(run({"bogus"}) == 1);
  CHECK(run({"train", "--no-such-flag", "1"}) == 1);
  CHECK(run({"train"}) == 1);  // no corpus
  testing::TempDir dir("cli");
  testing::spit(dir.path / "bad.cfg", "colour = blue\n");
  CHECK(run({"synth", "--config", (dir.path / "bad.cfg").string()}) == 1);
}

TEST_CASE("synth, train, eval, report and transfer") {
  testing::TempDir dir("cli");
  testing::spit(dir.path / "synth.cfg", kSmallSynth);
  // Paths in the file resolve against the file's directory.
  REQUIRE(run({"synth", "--config", (dir.path / "synth.cfg").string()}) == 0);
  CHECK(fs::exists(dir.path / "corpus" / "manifest.tsv"));
  CHECK(fs::exists(dir.path / "corpus" / "config.resolved"));

  REQUIRE(run(small_train(dir.path, "run1")) == 0);
  for (const char* f : {"checkpoint.ltck", "losses.tsv", "pred.ltlb", "report.tsv", "config.resolved",
                        "bank_aligned.ltfm", "trace.tsv"}) {
    CHECK(fs::exists(dir.path / "run1" / f));
  }
  const auto losses = testing::slurp(dir.path / "run1" / "losses.tsv");
  CHECK(std::count(losses.begin(), losses.end(), '\n') == 3);

  REQUIRE(run({"eval", "--pred", (dir.path / "run1" / "pred.ltlb").string(), "--gt",
               (dir.path / "corpus" / "labels.ltlb").string(), "--out", (dir.path / "ev").string()}) == 0);
  CHECK(testing::slurp(dir.path / "ev" / "report.tsv") == testing::slurp(dir.path / "run1" / "report.tsv"));
  CHECK(fs::exists(dir.path / "ev" / "confusion.ltfm"));

  REQUIRE(run({"report", "--pred", (dir.path / "run1" / "pred.ltlb").string(), "--gt",
               (dir.path / "corpus" / "labels.ltlb").string(), "--out", (dir.path / "rep").string()}) == 0);
  CHECK(testing::slurp(dir.path / "rep" / "tail.tsv").rfind("class\tcount\tiou", 0) == 0);

  REQUIRE(run({"transfer", "--checkpoint", (dir.path / "run1" / "checkpoint.ltck").string(), "--corpus",
               (dir.path / "corpus").string(), "--out", (dir.path / "tr").string()}) == 0);
  CHECK(io::read_labels(dir.path / "tr" / "pred.ltlb").size() == 600);
  CHECK(fs::exists(dir.path / "tr" / "report.tsv"));

  REQUIRE(run({"bank", "--corpus", (dir.path / "corpus").string(), "--bank", (dir.path / "corpus" / "bank").string(),
               "--out", (dir.path / "bk").string(), "--checkpoint", (dir.path / "run1" / "checkpoint.ltck").string(),
               "--align-steps", "10"}) == 0);
  CHECK(fs::exists(dir.path / "bk" / "bank_aligned.ltfm"));
}

TEST_CASE("resolved config reproduces the run") {
  testing::TempDir dir("cli");
  testing::spit(dir.path / "synth.cfg", kSmallSynth);
  REQUIRE(run({"synth", "--config", (dir.path / "synth.cfg").string()}) == 0);
  REQUIRE(run(small_train(dir.path, "run")) == 0);
  const auto first = testing::tree(dir.path / "run");
  fs::copy_file(dir.path / "run" / "config.resolved", dir.path / "again.cfg");
  fs::remove_all(dir.path / "run");
  REQUIRE(run({"train", "--config", (dir.path / "again.cfg").string()}) == 0);
  CHECK(testing::tree(dir.path / "run") == first);
}

TEST_CASE("data and numeric failures map to exit codes") {
  testing::TempDir dir("cli");
  CHECK(run({"eval", "--pred", (dir.path / "none.ltlb").string(), "--gt", (dir.path / "none.ltlb").string()}) == 2);
  testing::spit(dir.path / "junk.ltlb", "JUNKJUNKJUNKJUNK");
  CHECK(run({"eval", "--pred", (dir.path / "junk.ltlb").string(), "--gt", (dir.path / "junk.ltlb").string()}) == 2);

  testing::spit(dir.path / "synth.cfg", kSmallSynth);
  REQUIRE(run({"synth", "--config", (dir.path / "synth.cfg").string()}) == 0);
  CHECK(run({"bank", "--corpus", (dir.path / "corpus").string(), "--bank", (dir.path / "corpus" / "bank").string(),
             "--out", (dir.path / "bk").string(), "--hidden", "16", "--feature-dim", "8", "--align-lr", "1e30",
             "--align-steps", "5"}) == 3);
}

}  // TEST_SUITE

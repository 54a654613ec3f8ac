#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include "hnas/cli.hpp"
#include "hnas/errors.hpp"

namespace fs = std::filesystem;
using namespace hnas;

namespace {

struct Run {
  int status;
  std::string out, err;
};

Run hnas_cli(std::vector<std::string> args, std::map<std::string, std::string> env = {}) {
  std::ostringstream out, err;
  const int status = run_cli(args, out, err, [&](const char* name) -> std::optional<std::string> {
    if (auto it = env.find(name); it != env.end()) return it->second;
    return std::nullopt;
  });
  return {status, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hnas_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_genome(const fs::path& dir, const Genome& g = reference_genome()) {
  const auto p = (dir / "arch.genome").string();
  write_text_file(p, to_text(g));
  return p;
}

// Keeps proxy training to a fraction of a second per candidate.
const std::vector<std::string> kTiny = {"--set", "synth_samples=48", "--set", "proxy_epochs=1", "--set", "batch=4"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  return args;
}

}  // namespace

TEST(Config, DefaultsMatchTheSearchSetting) {
  const RunConfig c;
  EXPECT_EQ(c.target_macs, 550e6);
  EXPECT_EQ(c.alpha, -0.07);
  EXPECT_EQ(c.reward_form, RewardForm::penalize_excess);
  EXPECT_EQ(c.proxy.epochs, 5u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, TextRoundTripsEveryKey) {
  RunConfig c;
  c.set("alpha", "-0.5");
  c.set("reward_form", "literal");
  c.set("dataset", "/data/x");
  c.set("dataset_format", "dir");
  c.set("resolution", "96");
  c.set("count_norms", "true");
  c.set("phi", "2.5");
  RunConfig d;
  apply_config_text(d, c.to_text(), "roundtrip");
  EXPECT_EQ(d.to_text(), c.to_text());
  const std::string text = c.to_text();
  EXPECT_EQ(config_keys().size(), static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
  RunConfig e;
  apply_config_text(e, RunConfig{}.to_text(), "defaults");
  EXPECT_FALSE(e.resolution.has_value());
}

TEST(Config, ShippedExampleCoversEveryKeyWithDefaults) {
  const std::string text = read_text_file(std::string(HNAS_SOURCE_DIR) + "/configs/search.cfg");
  RunConfig c;
  c.seed = 99;
  c.resolution = 64;
  apply_config_text(c, text, "configs/search.cfg");
  EXPECT_EQ(c.to_text(), RunConfig{}.to_text());
  for (const auto& key : config_keys()) EXPECT_NE(text.find("\n" + key + " ="), std::string::npos) << key;
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  RunConfig c;
  EXPECT_THROW(c.set("colour", "red"), ConfigError);
  EXPECT_THROW(c.set("seed", "-1"), ConfigError);
  EXPECT_THROW(c.set("alpha", "nan"), ConfigError);
  EXPECT_THROW(c.set("workers", "2x"), ConfigError);
  EXPECT_THROW(c.set("count_norms", "yes"), ConfigError);
  try {
    apply_config_text(c, "# comment\nseed = 3\n\nbogus = 1\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:4"), std::string::npos);
  }
  c = {};
  c.topk = 70;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.phi = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, PrecedenceIsFileThenEnvironmentThenFlags) {
  const auto dir = scratch("precedence");
  const auto cfg = (dir / "run.cfg").string();
  write_text_file(cfg, "seed = 5\nworkers = 2\nout_dir = " + (dir / "out").string() + "\n");
  const auto genome = write_genome(dir);
  // decode does no work, so the effective config is only observable through
  // search's config.txt; use a tiny search.
  auto run = [&](std::vector<std::string> extra, std::map<std::string, std::string> env) {
    std::vector<std::string> args = with_tiny({"search", "--config", cfg, "--num-samples", "1", "--topk", "1"});
    args.insert(args.end(), extra.begin(), extra.end());
    EXPECT_EQ(hnas_cli(args, env).status, 0);
    RunConfig c;
    apply_config_text(c, read_text_file((dir / "out" / "config.txt").string()), "config.txt");
    return c;
  };
  EXPECT_EQ(run({}, {}).seed, 5u);
  EXPECT_EQ(run({}, {{"HNAS_SEED", "6"}, {"HNAS_WORKERS", "3"}}).seed, 6u);
  EXPECT_EQ(run({}, {{"HNAS_WORKERS", "3"}}).workers, 3u);
  const auto c = run({"--seed", "7", "--workers", "1"}, {{"HNAS_SEED", "6"}, {"HNAS_WORKERS", "3"}});
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.workers, 1u);
}

TEST(Cli, UsageAndConfigErrorsExitNonzero) {
  EXPECT_EQ(hnas_cli({}).status, 2);
  EXPECT_EQ(hnas_cli({"frobnicate"}).status, 2);
  EXPECT_EQ(hnas_cli({"search", "--set", "bogus=1"}).status, 2);
  EXPECT_EQ(hnas_cli({"search", "--config", "/nonexistent.cfg"}).status, 2);
  EXPECT_EQ(hnas_cli({"search"}, {{"HNAS_WORKERS", "0"}}).status, 2);
  const auto help = hnas_cli({"--help"});
  EXPECT_EQ(help.status, 0);
  EXPECT_NE(help.out.find("search"), std::string::npos);
}

TEST(Cli, SearchEmitsTopkGenomesAndReproducibleHistory) {
  const auto dir = scratch("search");
  auto search = [&](const std::string& out, const std::string& workers) {
    return hnas_cli(with_tiny({"search", "--num-samples", "8", "--topk", "2", "--seed", "11", "--workers", workers,
                               "--out", (dir / out).string()}));
  };
  const auto a = search("a", "1");
  ASSERT_EQ(a.status, 0) << a.err;
  EXPECT_NE(a.out.find("best_reward"), std::string::npos);
  EXPECT_NE(a.out.find("mean_macs"), std::string::npos);
  std::size_t genomes = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) genomes += e.path().extension() == ".genome";
  EXPECT_EQ(genomes, 2u);
  ASSERT_EQ(search("b", "2").status, 0);
  const auto history = read_text_file((dir / "a" / "history.jsonl").string());
  EXPECT_EQ(history, read_text_file((dir / "b" / "history.jsonl").string()));
  EXPECT_EQ(read_history((dir / "a" / "history.jsonl").string()).size(), 8u);

  // Emitted genomes are readable by every other command.
  const auto top = (dir / "a" / "top1.genome").string();
  EXPECT_EQ(hnas_cli({"decode", top}).status, 0);
  EXPECT_EQ(hnas_cli({"cost", top}).status, 0);
  EXPECT_EQ(hnas_cli({"scale", top, "--phi", "1", "-o", (dir / "top1.plan").string()}).status, 0);
  EXPECT_EQ(hnas_cli({"cost", (dir / "top1.plan").string()}).status, 0);
  EXPECT_EQ(hnas_cli(with_tiny({"train", top, "--synth", "--metrics", (dir / "m.csv").string()})).status, 0);
}

TEST(Cli, CostReportOracleAndDeterminism) {
  const auto dir = scratch("cost");
  const auto genome = write_genome(dir);
  const auto a = hnas_cli({"cost", genome});
  ASSERT_EQ(a.status, 0) << a.err;
  EXPECT_NE(a.out.find("resolution 160"), std::string::npos);
  EXPECT_NE(a.out.find("stage4.block7"), std::string::npos);
  EXPECT_EQ(hnas_cli({"cost", genome}).out, a.out);

  const auto proxy32 = hnas_cli({"cost", genome, "--skeleton", "proxy", "--resolution", "32", "--oracle"});
  EXPECT_EQ(proxy32.status, 0) << proxy32.err;
  EXPECT_NE(proxy32.out.find("oracle: analytic equals instrumented"), std::string::npos);
  const auto ref64 = hnas_cli({"cost", genome, "--resolution", "64", "--oracle", "--count-norms"});
  EXPECT_EQ(ref64.status, 0) << ref64.err;
  EXPECT_NE(ref64.out.find("oracle: analytic equals instrumented"), std::string::npos);
  // A stride-2 stem at 32 leaves the last down-sampling a 1x1 grid.
  EXPECT_EQ(hnas_cli({"cost", genome, "--resolution", "32", "--oracle"}).status, 1);
  EXPECT_EQ(hnas_cli({"cost", genome, "--resolution", "0"}).status, 1);

  const auto json = hnas_cli({"cost", genome, "--json"});
  EXPECT_EQ(json.out.front(), '{');
  write_text_file((dir / "bad.genome").string(), "format genome/v1\nstages 5\nstage 0 gop=Nope\n");
  const auto bad = hnas_cli({"cost", (dir / "bad.genome").string()});
  EXPECT_EQ(bad.status, 1);
  EXPECT_NE(bad.err.find("bad.genome"), std::string::npos);
  EXPECT_EQ(hnas_cli({"cost", (dir / "missing.genome").string()}).status, 1);
}

TEST(Cli, ScaleIdentityRepeatsAndMonotoneCost) {
  const auto dir = scratch("scale");
  const auto genome = write_genome(dir);
  const auto base = resolve(reference_genome(), BaseSkeleton::reference());
  const auto p0 = (dir / "phi0.plan").string();
  ASSERT_EQ(hnas_cli({"scale", genome, "--phi", "0", "-o", p0}).status, 0);
  EXPECT_EQ(plan_from_text(read_text_file(p0)), base);

  const auto p1 = (dir / "phi1.plan").string();
  ASSERT_EQ(hnas_cli({"scale", genome, "--phi", "1", "-o", p1}).status, 0);
  const auto scaled = plan_from_text(read_text_file(p1));
  for (std::size_t i = 0; i < base.stages.size(); ++i) {
    EXPECT_EQ(scaled.stages[i].repeats, static_cast<std::size_t>(std::ceil(1.2 * base.stages[i].repeats)));
  }

  std::uint64_t previous = 0;
  for (const char* phi : {"0", "0.5", "1", "1.5", "2", "3"}) {
    const auto p = (dir / "p.plan").string();
    ASSERT_EQ(hnas_cli({"scale", genome, "--phi", phi, "-o", p}).status, 0);
    const auto macs = network_cost(plan_from_text(read_text_file(p))).total.macs;
    EXPECT_GE(macs, previous) << "phi " << phi;
    previous = macs;
  }
  EXPECT_EQ(hnas_cli({"scale", genome, "--phi", "-1", "-o", p0}).status, 2);
}

TEST(Cli, TrainWritesMetricsAndIsDeterministic) {
  const auto dir = scratch("train");
  const auto genome = write_genome(dir);
  const auto metrics = (dir / "metrics.csv").string();
  const auto a = hnas_cli(with_tiny({"train", genome, "--synth", "--epochs", "1", "--metrics", metrics}));
  ASSERT_EQ(a.status, 0) << a.err;
  const auto csv = read_text_file(metrics);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv.rfind("epoch,train_loss,validation_accuracy\n1,", 0), 0u);
  const auto b = hnas_cli(with_tiny({"train", genome, "--synth", "--epochs", "1", "--metrics", metrics}));
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(read_text_file(metrics), csv);

  const auto missing = hnas_cli({"train", genome, "--data", (dir / "nope").string()});
  EXPECT_EQ(missing.status, 1);
  EXPECT_NE(missing.err.find("nope"), std::string::npos);
}

TEST(Cli, DecodeRoundTripsTokens) {
  const auto dir = scratch("decode");
  const auto genome = write_genome(dir);
  const auto a = hnas_cli({"decode", genome});
  ASSERT_EQ(a.status, 0);
  const auto tokens = encode(reference_genome());
  std::string list;
  for (auto t : tokens) list += (list.empty() ? "" : ",") + std::to_string(t);
  EXPECT_EQ(a.out.rfind("tokens " + list + "\n", 0), 0u);
  EXPECT_EQ(hnas_cli({"decode", "--tokens", list}).out, a.out);
  EXPECT_EQ(hnas_cli({"decode", "--tokens", "1,2"}).status, 1);
  EXPECT_EQ(hnas_cli({"decode"}).status, 2);
}

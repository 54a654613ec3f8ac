#include "hnas/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "hnas/errors.hpp"

namespace hnas {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + ": expected " +
                    std::string(expected));
}

template <class T>
T parse_unsigned(std::string_view key, std::string_view value) {
  T v{};
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || end != value.data() + value.size()) bad_value(key, value, "a non-negative integer");
  return v;
}

double parse_real(std::string_view key, std::string_view value) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || end != value.data() + value.size() || !std::isfinite(v)) {
    bad_value(key, value, "a finite number");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::string format_real(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string_view reward_form_name(RewardForm form) {
  return form == RewardForm::literal ? "literal" : "penalize_excess";
}

std::string_view dataset_format_name(DatasetFormat format) {
  return format == DatasetFormat::idx ? "idx" : "dir";
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, std::string_view, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define HNAS_UINT_KEY(name, field)                                                                            \
  Key {                                                                                                       \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { c.field = parse_unsigned<decltype(c.field)>(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                                            \
  }
#define HNAS_REAL_KEY(name, field)                                                                      \
  Key {                                                                                                 \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { c.field = parse_real(k, v); },     \
        [](const RunConfig& c) { return format_real(c.field); }                                         \
  }
#define HNAS_BOOL_KEY(name, field)                                                                      \
  Key {                                                                                                 \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { c.field = parse_bool(k, v); },     \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }                     \
  }
#define HNAS_TEXT_KEY(name, field)                                                                      \
  Key {                                                                                                 \
    name, [](RunConfig& c, std::string_view, std::string_view v) { c.field = std::string(v); },         \
        [](const RunConfig& c) { return c.field; }                                                      \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      HNAS_UINT_KEY("seed", seed),
      HNAS_UINT_KEY("workers", workers),
      HNAS_UINT_KEY("num_samples", num_samples),
      HNAS_REAL_KEY("target_macs", target_macs),
      HNAS_REAL_KEY("alpha", alpha),
      Key{"reward_form",
          [](RunConfig& c, std::string_view k, std::string_view v) {
            if (v == "penalize_excess") {
              c.reward_form = RewardForm::penalize_excess;
            } else if (v == "literal") {
              c.reward_form = RewardForm::literal;
            } else {
              bad_value(k, v, "penalize_excess or literal");
            }
          },
          [](const RunConfig& c) { return std::string(reward_form_name(c.reward_form)); }},
      HNAS_UINT_KEY("topk", topk),
      HNAS_UINT_KEY("batch", batch),
      HNAS_REAL_KEY("ppo_lr", ppo.lr),
      HNAS_REAL_KEY("ppo_clip", ppo.clip),
      HNAS_UINT_KEY("ppo_epochs", ppo.epochs),
      HNAS_REAL_KEY("entropy_coef", ppo.entropy_coef),
      HNAS_REAL_KEY("baseline_momentum", ppo.baseline_momentum),
      HNAS_UINT_KEY("policy_hidden", policy.hidden),
      HNAS_UINT_KEY("policy_embedding", policy.embedding),
      HNAS_BOOL_KEY("record_wall_time", record_wall_time),
      HNAS_UINT_KEY("proxy_epochs", proxy.epochs),
      HNAS_UINT_KEY("proxy_batch", proxy.batch_size),
      HNAS_REAL_KEY("proxy_lr", proxy.lr),
      HNAS_REAL_KEY("proxy_weight_decay", proxy.weight_decay),
      HNAS_UINT_KEY("proxy_resolution", proxy.resolution),
      HNAS_TEXT_KEY("dataset", dataset),
      Key{"dataset_format",
          [](RunConfig& c, std::string_view k, std::string_view v) {
            try {
              c.dataset_format = parse_dataset_format(v);
            } catch (const ContractError&) {
              bad_value(k, v, "idx or dir");
            }
          },
          [](const RunConfig& c) { return std::string(dataset_format_name(c.dataset_format)); }},
      HNAS_TEXT_KEY("labels_path", labels_path),
      HNAS_REAL_KEY("validation_fraction", validation_fraction),
      HNAS_UINT_KEY("synth_samples", synth_samples),
      HNAS_UINT_KEY("synth_grid", synth_grid),
      HNAS_UINT_KEY("synth_classes", synth_classes),
      HNAS_TEXT_KEY("skeleton", skeleton),
      Key{"resolution",
          [](RunConfig& c, std::string_view k, std::string_view v) {
            if (v.empty()) {
              c.resolution.reset();
            } else {
              c.resolution = parse_unsigned<std::size_t>(k, v);
            }
          },
          [](const RunConfig& c) { return c.resolution ? std::to_string(*c.resolution) : std::string(); }},
      HNAS_BOOL_KEY("count_norms", count_norms),
      HNAS_REAL_KEY("depth_coef", scaling.depth),
      HNAS_REAL_KEY("width_coef", scaling.width),
      HNAS_REAL_KEY("resolution_coef", scaling.resolution),
      HNAS_REAL_KEY("phi", phi),
      HNAS_TEXT_KEY("out_dir", out_dir),
  };
  return table;
}

#undef HNAS_UINT_KEY
#undef HNAS_REAL_KEY
#undef HNAS_BOOL_KEY
#undef HNAS_TEXT_KEY

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& k : keys()) {
    if (key == k.name) {
      k.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::validate() const {
  require(workers >= 1, "workers must be at least 1");
  require(num_samples >= 1, "num_samples must be at least 1");
  require(topk >= 1 && topk <= num_samples, "topk must lie in [1, num_samples]");
  require(batch >= 1, "batch must be at least 1");
  require(target_macs > 0, "target_macs must be positive");
  require(ppo.lr > 0 && ppo.clip > 0 && ppo.epochs >= 1, "ppo_lr, ppo_clip and ppo_epochs must be positive");
  require(ppo.entropy_coef >= 0, "entropy_coef must be non-negative");
  require(ppo.baseline_momentum >= 0 && ppo.baseline_momentum < 1, "baseline_momentum must lie in [0, 1)");
  require(policy.hidden >= 1 && policy.embedding >= 1, "policy sizes must be positive");
  require(proxy.epochs >= 1, "proxy_epochs must be at least 1");
  require(proxy.batch_size >= 1, "proxy_batch must be at least 1");
  require(proxy.lr > 0 && proxy.weight_decay >= 0, "proxy_lr must be positive and proxy_weight_decay non-negative");
  require(proxy.resolution >= 1, "proxy_resolution must be positive");
  require(!dataset.empty(), "dataset must be 'synth' or a path");
  require(validation_fraction > 0 && validation_fraction < 1, "validation_fraction must lie in (0, 1)");
  require(synth_samples >= 2, "synth_samples must be at least 2");
  require(synth_grid >= 8, "synth_grid must be at least 8");
  require(synth_classes >= 2, "synth_classes must be at least 2");
  require(skeleton == "reference" || skeleton == "proxy", "skeleton must be reference or proxy");
  require(scaling.depth > 0 && scaling.width > 0 && scaling.resolution > 0, "scaling coefficients must be positive");
  require(phi >= 0, "phi must be non-negative");
  require(!out_dir.empty(), "out_dir must not be empty");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) {
    const std::string v = k.get(*this);
    out += std::string(k.name) + (v.empty() ? " =" : " = " + v) + "\n";
  }
  return out;
}

SearchConfig RunConfig::search_config() const {
  SearchConfig s;
  s.num_samples = num_samples;
  s.target_macs = target_macs;
  s.alpha = alpha;
  s.reward_form = reward_form;
  s.seed = seed;
  s.topk = topk;
  s.batch = batch;
  s.workers = workers;
  s.ppo = ppo;
  s.policy = policy;
  s.record_wall_time = record_wall_time;
  return s;
}

BaseSkeleton RunConfig::genome_skeleton() const {
  return skeleton == "proxy" ? BaseSkeleton::proxy(synth_classes) : BaseSkeleton::reference();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.emplace_back(k.name);
  return out;
}

void apply_config_text(RunConfig& config, std::string_view text, const std::string& origin) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    try {
      if (eq == std::string_view::npos) throw ConfigError("expected key = value");
      config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

Dataset load_configured_dataset(const RunConfig& config) {
  const std::uint64_t data_seed = split_seed(config.seed, 3);
  if (config.dataset == "synth") {
    return synth_task(data_seed, config.synth_samples, config.synth_grid, config.synth_classes,
                      config.validation_fraction);
  }
  LoadOptions opts;
  opts.seed = data_seed;
  opts.validation_fraction = config.validation_fraction;
  opts.labels_path = config.labels_path;
  return load_dataset(config.dataset, config.dataset_format, opts);
}

ArchitectureFile read_architecture(const std::string& path, const BaseSkeleton& skeleton) {
  const std::string text = read_text_file(path);
  ArchitectureFile file;
  try {
    if (text.rfind("format plan/", 0) == 0) {
      file.plan = plan_from_text(text);
    } else {
      file.genome = genome_from_text(text);
      file.plan = resolve(*file.genome, skeleton);
    }
  } catch (const FormatError& e) {
    throw FormatError("'" + path + "': " + e.what(), e.offset());
  }
  return file;
}

// ---- commands ----------------------------------------------------------------

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "key = value config file");
  cmd->add_option("--set", flags.sets, "override one config key (key=value); repeatable");
  cmd->add_option("--seed", flags.seed, "top-level seed");
  cmd->add_option("--workers", flags.workers, "parallel proxy trainings");
}

RunConfig build_config(const CommonFlags& flags, const EnvLookup& env,
                       const std::vector<std::pair<std::string, std::string>>& explicit_values) {
  RunConfig c;
  if (!flags.config_path.empty()) {
    std::string text;
    try {
      text = read_text_file(flags.config_path);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    apply_config_text(c, text, flags.config_path);
  }
  if (auto v = env("HNAS_SEED")) c.set("seed", trim(*v));
  if (auto v = env("HNAS_WORKERS")) c.set("workers", trim(*v));
  for (const auto& s : flags.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    c.set(trim(std::string_view(s).substr(0, eq)), trim(std::string_view(s).substr(eq + 1)));
  }
  if (flags.seed) c.seed = *flags.seed;
  if (flags.workers) c.workers = *flags.workers;
  for (const auto& [k, v] : explicit_values) c.set(k, v);
  c.validate();
  return c;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string gmacs(std::uint64_t macs) { return fixed(static_cast<double>(macs) / 1e9, 4) + "G"; }
std::string mparams(std::uint64_t params) { return fixed(static_cast<double>(params) / 1e6, 3) + "M"; }

int cmd_search(const RunConfig& cfg, std::ostream& out) {
  fs::create_directories(cfg.out_dir);
  write_text_file((fs::path(cfg.out_dir) / "config.txt").string(), cfg.to_text());
  const Dataset data = load_configured_dataset(cfg);
  CostOptions cost;
  cost.count_norms = cfg.count_norms;
  const ProxyEvaluator evaluator{data, cfg.proxy, BaseSkeleton::proxy(data.num_classes), BaseSkeleton::reference(),
                                 cost};
  SearchConfig sc = cfg.search_config();
  sc.history_path = (fs::path(cfg.out_dir) / "history.jsonl").string();
  const SearchResult result = run_search(std::cref(evaluator), sc);

  std::size_t failed = 0;
  double best_acc = 0.0, macs_sum = 0.0;
  for (const auto& c : result.history) {
    failed += c.failed ? 1 : 0;
    best_acc = std::max(best_acc, c.accuracy);
    macs_sum += static_cast<double>(c.macs);
  }
  out << "samples  failed  best_reward  best_accuracy  mean_macs\n";
  out << std::setw(7) << result.history.size() << "  " << std::setw(6) << failed << "  " << std::setw(11)
      << fixed(result.top.front().reward, 4) << "  " << std::setw(13) << fixed(best_acc, 4) << "  " << std::setw(9)
      << gmacs(static_cast<std::uint64_t>(macs_sum / static_cast<double>(result.history.size()))) << "\n\n";
  out << "rank  index  reward  accuracy  macs  genome\n";
  for (std::size_t i = 0; i < result.top.size(); ++i) {
    const auto& c = result.top[i];
    const auto path = fs::path(cfg.out_dir) / ("top" + std::to_string(i + 1) + ".genome");
    write_text_file(path.string(), to_text(c.genome));
    out << i + 1 << "  " << c.index << "  " << fixed(c.reward, 4) << "  " << fixed(c.accuracy, 4) << "  "
        << gmacs(c.macs) << "  " << path.string() << "\n";
  }
  out << "history: " << sc.history_path << "\n";
  return 0;
}

bool same_cost(const CostReport& a, const CostReport& b, std::ostream& err) {
  bool ok = a.items.size() == b.items.size();
  for (std::size_t i = 0; ok && i < a.items.size(); ++i) {
    const auto& x = a.items[i];
    const auto& y = b.items[i];
    if (x.label != y.label || x.cost.macs != y.cost.macs || x.cost.params != y.cost.params) {
      err << "oracle mismatch at " << x.label << ": analytic " << x.cost.macs << " MACs / " << x.cost.params
          << " params, counted " << y.cost.macs << " / " << y.cost.params << "\n";
      ok = false;
    }
  }
  return ok && a.total.macs == b.total.macs && a.total.params == b.total.params;
}

int cmd_cost(const RunConfig& cfg, const std::string& path, bool oracle, bool json, std::ostream& out,
             std::ostream& err) {
  const auto arch = read_architecture(path, cfg.genome_skeleton());
  const std::size_t resolution = cfg.resolution.value_or(arch.plan.resolution);
  CostOptions opts;
  opts.count_norms = cfg.count_norms;
  const CostReport report = network_cost(arch.plan, resolution, opts);
  out << (json ? report.json() + "\n" : report.table());
  if (oracle) {
    const CostReport counted = instrumented_count(arch.plan, resolution, opts);
    if (!same_cost(report, counted, err)) {
      err << "oracle: analytic and instrumented counts differ\n";
      return 1;
    }
    out << "oracle: analytic equals instrumented (" << report.items.size() << " items, " << report.total.macs
        << " MACs, " << report.total.params << " params)\n";
  }
  return 0;
}

int cmd_scale(const RunConfig& cfg, const std::string& path, const std::string& output, std::ostream& out) {
  const auto arch = read_architecture(path, cfg.genome_skeleton());
  const NetworkPlan scaled = compound_scale(arch.plan, cfg.phi, cfg.scaling);
  CostOptions opts;
  opts.count_norms = cfg.count_norms;
  const Cost before = network_cost(arch.plan, opts).total;
  const Cost after = network_cost(scaled, opts).total;
  write_text_file(output, to_text(scaled));
  out << "phi " << format_real(cfg.phi) << "\n";
  out << "         resolution  macs  params\n";
  out << "before   " << arch.plan.resolution << "  " << gmacs(before.macs) << "  " << mparams(before.params) << "\n";
  out << "after    " << scaled.resolution << "  " << gmacs(after.macs) << "  " << mparams(after.params) << "\n";
  out << "plan: " << output << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& path, const std::string& metrics_path, std::ostream& out,
              std::ostream& err) {
  const Dataset data = load_configured_dataset(cfg);
  BaseSkeleton skeleton = BaseSkeleton::proxy(data.num_classes);
  skeleton.in_channels = data.channels;
  const auto arch = read_architecture(path, skeleton);
  ProxyConfig pc = cfg.proxy;
  pc.seed = cfg.seed;
  const ProxyResult r = train_proxy(arch.plan, data, pc);

  std::ostringstream csv;
  csv << "epoch,train_loss,validation_accuracy\n";
  for (const auto& e : r.epochs) {
    csv << e.epoch << "," << format_real(e.train_loss) << "," << format_real(e.validation_accuracy) << "\n";
  }
  const fs::path metrics(metrics_path);
  if (metrics.has_parent_path()) fs::create_directories(metrics.parent_path());
  write_text_file(metrics_path, csv.str());
  out << "initial_loss " << fixed(r.initial_loss, 4) << "\n";
  for (const auto& e : r.epochs) {
    out << "epoch " << e.epoch << "  train_loss " << fixed(e.train_loss, 4) << "  validation_accuracy "
        << fixed(e.validation_accuracy, 4) << "\n";
  }
  out << "metrics: " << metrics_path << "\n";
  if (r.failed) {
    err << "training failed: " << r.failure << "\n";
    return 1;
  }
  out << "accuracy " << format_real(r.accuracy) << "\n";
  return 0;
}

std::vector<std::size_t> parse_token_list(const std::string& list) {
  std::vector<std::size_t> tokens;
  std::string_view rest = list;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto item = trim(rest.substr(0, comma));
    tokens.push_back(parse_unsigned<std::size_t>("--tokens", item));
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
  }
  return tokens;
}

int cmd_decode(const RunConfig& cfg, const std::string& path, const std::string& token_list, std::ostream& out) {
  const BaseSkeleton skeleton = cfg.genome_skeleton();
  Genome genome;
  if (!token_list.empty()) {
    genome = decode_genome(parse_token_list(token_list));
  } else {
    const auto arch = read_architecture(path, skeleton);
    if (!arch.genome) throw ContractError("'" + path + "' holds a plan; only genomes decode to tokens");
    genome = *arch.genome;
  }
  const auto tokens = encode(genome);
  out << "tokens";
  for (std::size_t i = 0; i < tokens.size(); ++i) out << (i == 0 ? " " : ",") << tokens[i];
  out << "\n" << to_text(genome) << to_text(resolve(genome, skeleton));
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env) {
  CLI::App app{"Hybrid network architecture search: search, cost, scale, train, decode"};
  app.name("hnas");
  app.require_subcommand(1, 1);

  CommonFlags common;
  std::vector<std::pair<std::string, std::string>> explicit_values;
  auto value_flag = [&](CLI::App* cmd, const std::string& flag, const char* key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&explicit_values, key](const std::string& v) { explicit_values.emplace_back(key, v); }, help);
  };

  auto* search = app.add_subcommand("search", "sample, proxy-train and rank architectures");
  add_common(search, common);
  value_flag(search, "--out", "out_dir", "output directory for history and top-k genomes");
  value_flag(search, "--num-samples", "num_samples", "candidates to evaluate");
  value_flag(search, "--topk", "topk", "genome files to emit");

  std::string arch_path;
  bool oracle = false, json = false;
  auto* cost = app.add_subcommand("cost", "itemized MACs and parameters of a genome or plan");
  add_common(cost, common);
  cost->add_option("architecture", arch_path, "genome or plan file")->required();
  value_flag(cost, "--resolution", "resolution", "input resolution (default: the plan's)");
  value_flag(cost, "--skeleton", "skeleton", "skeleton a genome resolves on: reference or proxy");
  cost->add_flag("--oracle", oracle, "cross-check against an instrumented forward pass");
  cost->add_flag("--json", json, "print the report as JSON");
  cost->add_flag_callback("--count-norms", [&] { explicit_values.emplace_back("count_norms", "true"); },
                          "fold normalization ops into MACs");

  std::string output;
  auto* scale = app.add_subcommand("scale", "compound-scale a genome or plan");
  add_common(scale, common);
  scale->add_option("architecture", arch_path, "genome or plan file")->required();
  scale->add_option("-o,--output", output, "scaled plan file")->required();
  value_flag(scale, "--phi", "phi", "compound scaling exponent (>= 0)");
  value_flag(scale, "--skeleton", "skeleton", "skeleton a genome resolves on: reference or proxy");

  std::string metrics_path;
  auto* train = app.add_subcommand("train", "proxy-train one architecture and record per-epoch metrics");
  add_common(train, common);
  train->add_option("architecture", arch_path, "genome or plan file")->required();
  train->add_flag_callback("--synth", [&] { explicit_values.emplace_back("dataset", "synth"); },
                           "use the seeded synthetic task");
  value_flag(train, "--data", "dataset", "dataset path");
  value_flag(train, "--format", "dataset_format", "dataset format: idx or dir");
  value_flag(train, "--epochs", "proxy_epochs", "training epochs");
  train->add_option("--metrics", metrics_path, "metrics CSV (default: <out_dir>/metrics.csv)");

  std::string token_list;
  auto* decode = app.add_subcommand("decode", "show the tokens, genome and plan of an architecture");
  add_common(decode, common);
  decode->add_option("architecture", arch_path, "genome file");
  decode->add_option("--tokens", token_list, "comma-separated token sequence");
  value_flag(decode, "--skeleton", "skeleton", "skeleton to resolve on: reference or proxy");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  RunConfig cfg;
  try {
    cfg = build_config(common, env, explicit_values);
  } catch (const ConfigError& e) {
    err << "hnas: configuration error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (search->parsed()) return cmd_search(cfg, out);
    if (cost->parsed()) return cmd_cost(cfg, arch_path, oracle, json, out, err);
    if (scale->parsed()) return cmd_scale(cfg, arch_path, output, out);
    if (train->parsed()) {
      return cmd_train(cfg, arch_path, metrics_path.empty() ? (fs::path(cfg.out_dir) / "metrics.csv").string()
                                                            : metrics_path,
                       out, err);
    }
    if (arch_path.empty() == token_list.empty()) {
      err << "hnas decode: give either a genome file or --tokens\n";
      return 2;
    }
    return cmd_decode(cfg, arch_path, token_list, out);
  } catch (const std::exception& e) {
    err << "hnas: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace hnas

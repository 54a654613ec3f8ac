#include "hnas/arch.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hnas/errors.hpp"
#include "hnas/rng.hpp"

namespace hnas {

std::array<std::size_t, kTokensPerStage> SearchDomains::arities() const {
  return {gops.size(), dsms.size(), expansions.size(), channel_mults.size(), repeat_deltas.size()};
}

std::uint64_t SearchDomains::per_stage() const {
  std::uint64_t n = 1;
  for (auto a : arities()) n *= a;
  return n;
}

std::uint64_t space_cardinality(std::size_t stages, const SearchDomains& domains) {
  const std::uint64_t per = domains.per_stage();
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < stages; ++i) {
    if (per != 0 && total > UINT64_MAX / per) throw ContractError("search space size overflows 64 bits");
    total *= per;
  }
  return total;
}

BaseSkeleton BaseSkeleton::reference() {
  BaseSkeleton s;
  s.channels = {48, 80, 128, 128, 256};
  s.repeats = {2, 4, 4, 4, 8};
  s.in_channels = 3;
  s.stem_stride = 2;
  s.num_classes = 1000;
  s.resolution = 160;
  return s;
}

BaseSkeleton BaseSkeleton::proxy(std::size_t num_classes) {
  BaseSkeleton s;
  s.channels = {6, 10, 16, 16, 32};
  s.repeats = {1, 1, 1, 1, 1};
  s.in_channels = 1;
  s.stem_stride = 1;
  s.num_classes = num_classes;
  s.resolution = 32;
  return s;
}

std::size_t round_to_multiple_of_8(double channels) {
  const double units = std::floor(channels / 8.0 + 0.5);
  return std::max<std::size_t>(8, static_cast<std::size_t>(units) * 8);
}

namespace {

template <class T>
std::size_t index_in(const std::vector<T>& domain, const T& value, const char* field) {
  auto it = std::find(domain.begin(), domain.end(), value);
  if (it == domain.end()) throw ContractError(std::string("genome field ") + field + " is outside its domain");
  return static_cast<std::size_t>(it - domain.begin());
}

}  // namespace

std::vector<std::size_t> encode(const Genome& genome, const SearchDomains& domains) {
  std::vector<std::size_t> tokens;
  tokens.reserve(genome.stages.size() * kTokensPerStage);
  for (const auto& s : genome.stages) {
    tokens.push_back(index_in(domains.gops, s.gop, "gop"));
    tokens.push_back(index_in(domains.dsms, s.dsm, "dsm"));
    tokens.push_back(index_in(domains.expansions, s.expansion, "e"));
    tokens.push_back(index_in(domains.channel_mults, s.channel_mult, "c_mult"));
    tokens.push_back(index_in(domains.repeat_deltas, s.repeat_delta, "r_delta"));
  }
  return tokens;
}

Genome decode_genome(const std::vector<std::size_t>& tokens, const SearchDomains& domains, std::size_t stages) {
  if (tokens.size() != stages * kTokensPerStage) {
    throw DecodeError("expected " + std::to_string(stages * kTokensPerStage) + " tokens, got " +
                          std::to_string(tokens.size()),
                      std::min(tokens.size(), stages * kTokensPerStage));
  }
  const auto arity = domains.arities();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= arity[i % kTokensPerStage]) {
      throw DecodeError("token value " + std::to_string(tokens[i]) + " exceeds its choice count " +
                            std::to_string(arity[i % kTokensPerStage]),
                        i);
    }
  }
  Genome g;
  for (std::size_t s = 0; s < stages; ++s) {
    const auto* t = &tokens[s * kTokensPerStage];
    g.stages.push_back({domains.gops[t[0]], domains.dsms[t[1]], domains.expansions[t[2]], domains.channel_mults[t[3]],
                        domains.repeat_deltas[t[4]]});
  }
  return g;
}

NetworkPlan resolve(const Genome& genome, const BaseSkeleton& skeleton) {
  if (genome.stages.size() != skeleton.channels.size() || genome.stages.size() != skeleton.repeats.size()) {
    throw ContractError("genome has " + std::to_string(genome.stages.size()) + " stages but the skeleton has " +
                        std::to_string(skeleton.channels.size()));
  }
  if (genome.stages.empty()) throw ContractError("a network needs at least one stage");
  NetworkPlan plan;
  plan.resolution = skeleton.resolution;
  plan.in_channels = skeleton.in_channels;
  plan.stem_stride = skeleton.stem_stride;
  plan.num_classes = skeleton.num_classes;
  for (std::size_t i = 0; i < genome.stages.size(); ++i) {
    const auto& gene = genome.stages[i];
    const long repeats = static_cast<long>(skeleton.repeats[i]) + gene.repeat_delta;
    plan.stages.push_back({gene.gop, gene.dsm, gene.expansion,
                           round_to_multiple_of_8(gene.channel_mult * static_cast<double>(skeleton.channels[i])),
                           static_cast<std::size_t>(std::max(1L, repeats))});
  }
  return plan;
}

NetworkPlan decode_tokens(const std::vector<std::size_t>& tokens, const BaseSkeleton& skeleton,
                          const SearchDomains& domains) {
  return resolve(decode_genome(tokens, domains, skeleton.channels.size()), skeleton);
}

Genome random_genome(std::uint64_t seed, const SearchDomains& domains, std::size_t stages) {
  Rng rng(seed);
  const auto arity = domains.arities();
  std::vector<std::size_t> tokens(stages * kTokensPerStage);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = rng.below(arity[i % kTokensPerStage]);
  return decode_genome(tokens, domains, stages);
}

Genome reference_genome() {
  Genome g;
  g.stages = {{GopKind::DWConv, DsmKind::L_DSM, 4, 1.0, 0},
              {GopKind::DWConv, DsmKind::L_DSM, 6, 1.0, 0},
              {GopKind::DWConv, DsmKind::L_DSM, 3, 1.0, 0},
              {GopKind::SA, DsmKind::LG_DSM, 2, 1.0, 0},
              {GopKind::SA, DsmKind::LG_DSM, 5, 1.0, 0}};
  return g;
}

Grid stem_grid(const NetworkPlan& plan) {
  if (plan.resolution == 0) throw ContractError("input resolution must be positive");
  if (plan.stem_stride == 0) throw ContractError("stem stride must be positive");
  const std::size_t side = (plan.resolution - 1) / plan.stem_stride + 1;
  return {side, side};
}

std::vector<Grid> stage_grids(const NetworkPlan& plan) {
  Grid g = stem_grid(plan);
  std::vector<Grid> grids;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    if (g.h < 2 || g.w < 2) {
      throw ContractError("stage " + std::to_string(i) + " down-sampling would receive a " + std::to_string(g.h) +
                          "x" + std::to_string(g.w) + " grid at resolution " + std::to_string(plan.resolution));
    }
    g = downsampled_grid(g);
    grids.push_back(g);
  }
  return grids;
}

NetworkPlan compound_scale(const NetworkPlan& plan, double phi, const ScalingCoefficients& coeffs) {
  if (!(phi >= 0.0)) throw ContractError("compound scaling needs phi >= 0");
  if (phi == 0.0) return plan;
  const double depth = std::pow(coeffs.depth, phi);
  const double width = std::pow(coeffs.width, phi);
  const double res = std::pow(coeffs.resolution, phi);
  NetworkPlan out = plan;
  for (auto& s : out.stages) {
    // The small slack keeps exact products such as 1.2 * 5 from rounding up.
    s.repeats = static_cast<std::size_t>(std::ceil(depth * static_cast<double>(s.repeats) - 1e-9));
    s.channels = round_to_multiple_of_8(width * static_cast<double>(s.channels));
  }
  const double units = std::floor(res * static_cast<double>(plan.resolution) / 32.0 + 0.5);
  out.resolution = std::max<std::size_t>(32, static_cast<std::size_t>(units) * 32);
  return out;
}

// ---- structured text -------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Line {
  std::string_view text;
  std::size_t offset;
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string_view::npos && line[first] != '#') lines.push_back({line, pos});
    pos = end + 1;
  }
  return lines;
}

struct Word {
  std::string_view text;
  std::size_t offset;
};

std::vector<Word> split_words(const Line& line) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < line.text.size()) {
    while (i < line.text.size() && (line.text[i] == ' ' || line.text[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.text.size() && line.text[i] != ' ' && line.text[i] != '\t') ++i;
    if (i > start) words.push_back({line.text.substr(start, i - start), line.offset + start});
  }
  return words;
}

template <class T>
T parse_number(const Word& w, std::string_view what) {
  T value{};
  auto res = std::from_chars(w.text.data(), w.text.data() + w.text.size(), value);
  if (res.ec != std::errc() || res.ptr != w.text.data() + w.text.size()) {
    throw FormatError("bad " + std::string(what) + " '" + std::string(w.text) + "'", w.offset);
  }
  return value;
}

// Reads `key=value` from word `w` and returns the value part.
Word field(const Word& w, std::string_view key) {
  if (w.text.size() <= key.size() || w.text.substr(0, key.size()) != key || w.text[key.size()] != '=') {
    throw FormatError("expected field '" + std::string(key) + "=', got '" + std::string(w.text) + "'", w.offset);
  }
  return {w.text.substr(key.size() + 1), w.offset + key.size() + 1};
}

void expect_words(const std::vector<Word>& words, std::size_t n, const Line& line, std::string_view record) {
  if (words.size() != n) {
    throw FormatError("record '" + std::string(record) + "' needs " + std::to_string(n) + " fields, got " +
                          std::to_string(words.size()),
                      line.offset);
  }
}

void expect_keyword(const Word& w, std::string_view keyword) {
  if (w.text != keyword) {
    throw FormatError("expected '" + std::string(keyword) + "', got '" + std::string(w.text) + "'", w.offset);
  }
}

class LineCursor {
 public:
  LineCursor(std::string_view text) : text_size_(text.size()), lines_(split_lines(text)) {}

  const Line& next(std::string_view expected) {
    if (at_ >= lines_.size()) throw FormatError("unexpected end of input, wanted '" + std::string(expected) + "'", text_size_);
    return lines_[at_++];
  }
  bool done() const { return at_ >= lines_.size(); }
  const Line& peek() const { return lines_[at_]; }

 private:
  std::size_t text_size_;
  std::vector<Line> lines_;
  std::size_t at_ = 0;
};

void read_format(LineCursor& cursor, std::string_view tag) {
  const auto& line = cursor.next("format");
  auto words = split_words(line);
  expect_words(words, 2, line, "format");
  expect_keyword(words[0], "format");
  if (words[1].text != tag) {
    throw FormatError("unsupported format '" + std::string(words[1].text) + "', expected '" + std::string(tag) + "'",
                      words[1].offset);
  }
}

std::size_t read_stage_index(const Word& w, std::size_t expected) {
  const auto idx = parse_number<std::size_t>(w, "stage index");
  if (idx != expected) throw FormatError("stage " + std::to_string(expected) + " expected", w.offset);
  return idx;
}

template <class Fn>
auto parse_enum(const Word& w, Fn parse) {
  try {
    return parse(w.text);
  } catch (const ContractError& e) {
    throw FormatError(e.what(), w.offset);
  }
}

void expect_end(const LineCursor& cursor) {
  if (!cursor.done()) throw FormatError("unexpected trailing record", cursor.peek().offset);
}

}  // namespace

std::string to_text(const Genome& genome) {
  std::ostringstream out;
  out << "format genome/v1\n";
  out << "stages " << genome.stages.size() << "\n";
  for (std::size_t i = 0; i < genome.stages.size(); ++i) {
    const auto& s = genome.stages[i];
    out << "stage " << i << " gop=" << to_string(s.gop) << " dsm=" << to_string(s.dsm) << " e=" << s.expansion
        << " c_mult=" << format_double(s.channel_mult) << " r_delta=" << s.repeat_delta << "\n";
  }
  return out.str();
}

Genome genome_from_text(std::string_view text) {
  LineCursor cursor(text);
  read_format(cursor, "genome/v1");
  const auto& header = cursor.next("stages");
  auto hw = split_words(header);
  expect_words(hw, 2, header, "stages");
  expect_keyword(hw[0], "stages");
  const auto count = parse_number<std::size_t>(hw[1], "stage count");
  const SearchDomains domains;
  Genome g;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& line = cursor.next("stage");
    auto w = split_words(line);
    expect_words(w, 7, line, "stage");
    expect_keyword(w[0], "stage");
    read_stage_index(w[1], i);
    StageGene s;
    s.gop = parse_enum(field(w[2], "gop"), parse_gop_kind);
    s.dsm = parse_enum(field(w[3], "dsm"), parse_dsm_kind);
    const auto e = field(w[4], "e");
    s.expansion = parse_number<std::size_t>(e, "expansion");
    const auto c = field(w[5], "c_mult");
    s.channel_mult = parse_number<double>(c, "channel multiplier");
    const auto r = field(w[6], "r_delta");
    s.repeat_delta = parse_number<int>(r, "repeat delta");
    if (std::find(domains.expansions.begin(), domains.expansions.end(), s.expansion) == domains.expansions.end()) {
      throw FormatError("expansion outside the search domain", e.offset);
    }
    if (std::find(domains.channel_mults.begin(), domains.channel_mults.end(), s.channel_mult) ==
        domains.channel_mults.end()) {
      throw FormatError("channel multiplier outside the search domain", c.offset);
    }
    if (std::find(domains.repeat_deltas.begin(), domains.repeat_deltas.end(), s.repeat_delta) ==
        domains.repeat_deltas.end()) {
      throw FormatError("repeat delta outside the search domain", r.offset);
    }
    g.stages.push_back(s);
  }
  expect_end(cursor);
  return g;
}

std::string to_text(const NetworkPlan& plan) {
  std::ostringstream out;
  out << "format plan/v1\n";
  out << "resolution " << plan.resolution << "\n";
  out << "stem in=" << plan.in_channels << " stride=" << plan.stem_stride << "\n";
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const auto& s = plan.stages[i];
    out << "stage " << i << " gop=" << to_string(s.gop) << " dsm=" << to_string(s.dsm) << " e=" << s.expansion
        << " channels=" << s.channels << " repeats=" << s.repeats << "\n";
  }
  out << "head classes=" << plan.num_classes << "\n";
  return out.str();
}

NetworkPlan plan_from_text(std::string_view text) {
  LineCursor cursor(text);
  read_format(cursor, "plan/v1");
  NetworkPlan plan;
  plan.stages.clear();

  const auto& res = cursor.next("resolution");
  auto rw = split_words(res);
  expect_words(rw, 2, res, "resolution");
  expect_keyword(rw[0], "resolution");
  plan.resolution = parse_number<std::size_t>(rw[1], "resolution");

  const auto& stem = cursor.next("stem");
  auto sw = split_words(stem);
  expect_words(sw, 3, stem, "stem");
  expect_keyword(sw[0], "stem");
  plan.in_channels = parse_number<std::size_t>(field(sw[1], "in"), "input channels");
  plan.stem_stride = parse_number<std::size_t>(field(sw[2], "stride"), "stem stride");

  for (;;) {
    const auto& line = cursor.next("stage or head");
    auto w = split_words(line);
    if (!w.empty() && w[0].text == "head") {
      expect_words(w, 2, line, "head");
      plan.num_classes = parse_number<std::size_t>(field(w[1], "classes"), "class count");
      break;
    }
    expect_words(w, 7, line, "stage");
    expect_keyword(w[0], "stage");
    read_stage_index(w[1], plan.stages.size());
    StagePlan s;
    s.gop = parse_enum(field(w[2], "gop"), parse_gop_kind);
    s.dsm = parse_enum(field(w[3], "dsm"), parse_dsm_kind);
    s.expansion = parse_number<std::size_t>(field(w[4], "e"), "expansion");
    s.channels = parse_number<std::size_t>(field(w[5], "channels"), "channel count");
    s.repeats = parse_number<std::size_t>(field(w[6], "repeats"), "repeat count");
    if (s.channels == 0 || s.repeats == 0 || s.expansion < 2 || s.expansion > 6) {
      throw FormatError("stage fields out of range", line.offset);
    }
    plan.stages.push_back(s);
  }
  if (plan.stages.empty()) throw FormatError("plan has no stages", text.size());
  expect_end(cursor);
  return plan;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path + "'");
}

}  // namespace hnas

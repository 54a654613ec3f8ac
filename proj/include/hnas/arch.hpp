#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hnas/dsm.hpp"
#include "hnas/gop.hpp"

namespace hnas {

inline constexpr std::size_t kNumStages = 5;
inline constexpr std::size_t kTokensPerStage = 5;

// Choice lists for each per-stage token, in token order.
struct SearchDomains {
  std::vector<GopKind> gops{kGopKinds.begin(), kGopKinds.end()};
  std::vector<DsmKind> dsms{kDsmKinds.begin(), kDsmKinds.end()};
  std::vector<std::size_t> expansions{2, 3, 4, 5, 6};
  std::vector<double> channel_mults{0.5, 0.75, 1.0, 1.25, 1.5};
  std::vector<int> repeat_deltas{-2, -1, 0, 1, 2};

  std::array<std::size_t, kTokensPerStage> arities() const;
  std::uint64_t per_stage() const;
};

struct StageGene {
  GopKind gop = GopKind::Conv;
  DsmKind dsm = DsmKind::L_DSM;
  std::size_t expansion = 2;
  double channel_mult = 1.0;
  int repeat_delta = 0;
  bool operator==(const StageGene&) const = default;
};

struct Genome {
  std::vector<StageGene> stages;
  bool operator==(const Genome&) const = default;
};

// Product of per-stage choice counts over `stages` stages. Throws
// ContractError when the count does not fit in 64 bits.
std::uint64_t space_cardinality(std::size_t stages, const SearchDomains& domains = {});

// Every genome-independent part of a network: base widths/depths, stem, head
// and the input resolution.
struct BaseSkeleton {
  std::vector<std::size_t> channels;
  std::vector<std::size_t> repeats;
  std::size_t in_channels = 3;
  std::size_t stem_stride = 2;
  std::size_t num_classes = 1000;
  std::size_t resolution = 224;

  // Stage widths/depths of the reference model at 160 pixels.
  static BaseSkeleton reference();
  // Desk-scale variant: widths divided by 8, one block per stage, gray 32x32
  // input and a stride-1 stem so the last down-sampling still sees a 2x2 grid.
  static BaseSkeleton proxy(std::size_t num_classes = 4);
};

struct StagePlan {
  GopKind gop = GopKind::Conv;
  DsmKind dsm = DsmKind::L_DSM;
  std::size_t expansion = 2;
  std::size_t channels = 8;
  std::size_t repeats = 1;
  bool operator==(const StagePlan&) const = default;
};

// Stem: 3x3 conv (in_channels -> stage-0 width) + BN + SiLU.
// Head: global average pool + linear classifier.
struct NetworkPlan {
  std::size_t resolution = 32;
  std::size_t in_channels = 3;
  std::size_t stem_stride = 2;
  std::size_t num_classes = 1000;
  std::vector<StagePlan> stages;

  std::size_t stem_channels() const { return stages.front().channels; }
  bool operator==(const NetworkPlan&) const = default;
};

std::size_t round_to_multiple_of_8(double channels);

std::vector<std::size_t> encode(const Genome& genome, const SearchDomains& domains = {});
Genome decode_genome(const std::vector<std::size_t>& tokens, const SearchDomains& domains = {},
                     std::size_t stages = kNumStages);
NetworkPlan resolve(const Genome& genome, const BaseSkeleton& skeleton);
NetworkPlan decode_tokens(const std::vector<std::size_t>& tokens, const BaseSkeleton& skeleton,
                          const SearchDomains& domains = {});

Genome random_genome(std::uint64_t seed, const SearchDomains& domains = {}, std::size_t stages = kNumStages);
// The reference stage table (unit width multiplier, no depth change).
Genome reference_genome();

// Grid seen by each stage's blocks; throws ContractError when a
// down-sampling module would receive a grid smaller than 2x2.
std::vector<Grid> stage_grids(const NetworkPlan& plan);
Grid stem_grid(const NetworkPlan& plan);

struct ScalingCoefficients {
  double depth = 1.2;       // alpha
  double width = 1.1;       // beta
  double resolution = 1.08; // gamma
};

NetworkPlan compound_scale(const NetworkPlan& plan, double phi, const ScalingCoefficients& coeffs = {});

// Structured text, one record per stage:
//   format genome/v1
//   stages 5
//   stage 0 gop=DWConv dsm=L-DSM e=4 c_mult=1 r_delta=0
std::string to_text(const Genome& genome);
Genome genome_from_text(std::string_view text);

//   format plan/v1
//   resolution 160
//   stem in=3 stride=2
//   stage 0 gop=DWConv dsm=L-DSM e=4 channels=48 repeats=2
//   head classes=1000
std::string to_text(const NetworkPlan& plan);
NetworkPlan plan_from_text(std::string_view text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace hnas

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hnas/arch.hpp"

namespace hnas {

struct NetworkOptions {
  BlockConfig block;
  DsmConfig dsm;
};

// Executable form of a NetworkPlan. While an OpLedger is active, forward()
// attributes work to "stem", "stage{i}.dsm", "stage{i}.block{j}" and "head".
class Network {
 public:
  struct Stage {
    DsmModule dsm;
    std::vector<GopBlock> blocks;
  };

  static Network build(const NetworkPlan& plan, const NetworkOptions& options, std::uint64_t seed);

  // images [b x in_channels x resolution x resolution] -> logits [b x classes]
  Tensor forward(const Tensor& images, bool training);

  const NetworkPlan& plan() const { return plan_; }
  const std::vector<Stage>& stages() const { return stages_; }
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  // Parameter counts under the same labels forward() uses, in execution order.
  std::vector<std::pair<std::string, std::size_t>> labeled_parameter_counts() const;
  void zero_final_projections();

 private:
  NetworkPlan plan_;
  ConvLayer stem_;
  BatchNorm stem_norm_;
  std::vector<Stage> stages_;
  Linear head_;
};

}  // namespace hnas

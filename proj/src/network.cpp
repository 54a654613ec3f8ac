#include "hnas/network.hpp"

#include <string>

#include "hnas/errors.hpp"
#include "hnas/op_counter.hpp"

namespace hnas {

Network Network::build(const NetworkPlan& plan, const NetworkOptions& options, std::uint64_t seed) {
  if (plan.stages.empty()) throw ContractError("a network needs at least one stage");
  const auto grids = stage_grids(plan);
  Rng rng(seed);
  Network net;
  net.plan_ = plan;
  const std::size_t c0 = plan.stem_channels();
  const auto stride = plan.stem_stride;
  net.stem_ = ConvLayer::init(rng, plan.in_channels, c0, 3, 3, {stride, stride, 1, 1, 1});
  net.stem_norm_ = BatchNorm::init(c0);
  std::size_t width = c0;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const auto& s = plan.stages[i];
    Stage stage{DsmModule::build(s.dsm, width, s.channels, options.dsm, rng), {}};
    bool position_pending = true;
    for (std::size_t j = 0; j < s.repeats; ++j) {
      const bool with_position = position_pending && (s.gop == GopKind::SA || s.gop == GopKind::MLP);
      stage.blocks.push_back(GopBlock::build(s.gop, s.channels, s.expansion, grids[i], options.block, rng, with_position));
      position_pending = false;
    }
    width = s.channels;
    net.stages_.push_back(std::move(stage));
  }
  net.head_ = Linear::init(rng, width, plan.num_classes);
  return net;
}

Tensor Network::forward(const Tensor& images, bool training) {
  const auto r = plan_.resolution;
  if (images.rank() != 4 || images.dim(1) != plan_.in_channels || images.dim(2) != r || images.dim(3) != r) {
    throw ShapeError("network expects [b x " + std::to_string(plan_.in_channels) + " x " + std::to_string(r) + " x " +
                     std::to_string(r) + "] images, got " + shape_str(images.shape()));
  }
  Tensor x;
  {
    OpLedger::Label label("stem");
    x = silu(normalize(conv2d(images, stem_), stem_norm_, training));
  }
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(i);
    {
      OpLedger::Label label(prefix + ".dsm");
      x = stages_[i].dsm.forward(x);
    }
    for (std::size_t j = 0; j < stages_[i].blocks.size(); ++j) {
      OpLedger::Label label(prefix + ".block" + std::to_string(j));
      x = stages_[i].blocks[j].forward(x, training);
    }
  }
  OpLedger::Label label("head");
  return head_(spatial_mean(x));
}

std::vector<Tensor> Network::parameters() const {
  std::vector<Tensor> out;
  stem_.collect(out);
  stem_norm_.collect(out);
  for (const auto& stage : stages_) {
    for (auto& t : stage.dsm.parameters()) out.push_back(t);
    for (const auto& block : stage.blocks) {
      for (auto& t : block.parameters()) out.push_back(t);
    }
  }
  head_.collect(out);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::vector<std::pair<std::string, std::size_t>> Network::labeled_parameter_counts() const {
  auto count = [](const std::vector<Tensor>& ts) {
    std::size_t n = 0;
    for (const auto& t : ts) n += t.numel();
    return n;
  };
  std::vector<Tensor> stem;
  stem_.collect(stem);
  stem_norm_.collect(stem);
  std::vector<std::pair<std::string, std::size_t>> out{{"stem", count(stem)}};
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(i);
    out.emplace_back(prefix + ".dsm", stages_[i].dsm.parameter_count());
    for (std::size_t j = 0; j < stages_[i].blocks.size(); ++j) {
      out.emplace_back(prefix + ".block" + std::to_string(j), stages_[i].blocks[j].parameter_count());
    }
  }
  std::vector<Tensor> head;
  head_.collect(head);
  out.emplace_back("head", count(head));
  return out;
}

void Network::zero_final_projections() {
  for (auto& stage : stages_) {
    for (auto& block : stage.blocks) block.zero_final_projections();
  }
}

}  // namespace hnas

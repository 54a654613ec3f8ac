#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace hnas {

// Per-label tallies gathered while a forward pass executes.
struct OpTally {
  std::uint64_t macs = 0;
  std::uint64_t norm_ops = 0;
};

// Collects multiply-accumulates executed by the contraction kernels on the
// current thread, attributed to whichever label is active.
class OpLedger {
 public:
  OpLedger();
  ~OpLedger();
  OpLedger(const OpLedger&) = delete;
  OpLedger& operator=(const OpLedger&) = delete;

  const std::map<std::string, OpTally>& tallies() const { return tallies_; }
  // Label order of first appearance.
  const std::vector<std::string>& order() const { return order_; }

  // Sets the active label until destroyed, restoring the previous one.
  class Label {
   public:
    explicit Label(std::string name);
    ~Label();
    Label(const Label&) = delete;
    Label& operator=(const Label&) = delete;

   private:
    std::string previous_;
    bool active_;
  };

  static OpLedger* active();
  void add_macs(std::uint64_t n);
  void add_norm_ops(std::uint64_t n);

 private:
  OpTally& current();

  OpLedger* previous_;
  std::string label_ = "unlabeled";
  std::map<std::string, OpTally> tallies_;
  std::vector<std::string> order_;
};

inline void record_macs(std::uint64_t n) {
  if (auto* ledger = OpLedger::active()) ledger->add_macs(n);
}
inline void record_norm_ops(std::uint64_t n) {
  if (auto* ledger = OpLedger::active()) ledger->add_norm_ops(n);
}

}  // namespace hnas

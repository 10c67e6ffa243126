#pragma once

#include <unordered_map>

#include "hgrec/autodiff.hpp"

namespace hgrec {

/// Turns parameter matrices into tape leaves. A matrix registered with a gradient sink becomes
/// a trainable leaf; anything else is recorded as a frozen view. Leaves are cached per matrix
/// so a block used twice on one tape shares a node.
class ParamBinder {
 public:
  explicit ParamBinder(ad::Tape& tape) : tape_(&tape) {}
  ParamBinder(ad::Tape& tape, std::unordered_map<const Matrix*, Matrix*> sinks)
      : tape_(&tape), sinks_(std::move(sinks)) {}

  ad::Var operator()(const Matrix& block) {
    auto cached = leaves_.find(&block);
    if (cached != leaves_.end()) return cached->second;
    auto sink = sinks_.find(&block);
    ad::Var v = sink == sinks_.end() ? tape_->constant_view(block)
                                     : tape_->parameter(block, sink->second);
    leaves_.emplace(&block, v);
    return v;
  }

  ad::Tape& tape() noexcept { return *tape_; }
  bool tracks_gradients() const noexcept { return !sinks_.empty(); }

 private:
  ad::Tape* tape_;
  std::unordered_map<const Matrix*, Matrix*> sinks_;
  std::unordered_map<const Matrix*, ad::Var> leaves_;
};

}  // namespace hgrec

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hgrec/autodiff.hpp"
#include "hgrec/encoder.hpp"
#include "hgrec/matrix.hpp"

namespace hgrec {

inline constexpr std::string_view kDefaultPromptTemplate =
    "recommend the top-K most relevant items for user U based on their interactions from T2 to T1";

/// Finite prompt vocabulary. Ids are contiguous; the embedding table lives with the model
/// parameters (one row per id).
class PromptVocab {
 public:
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kUser = "<user>";
  static constexpr std::string_view kTime = "<time>";
  static constexpr std::string_view kLargeK = "<k>";
  static constexpr int kMaxLiteralK = 20;

  PromptVocab() = default;
  /// Specials, the literals 1..20 and every word of the rendered template.
  static PromptVocab from_template(std::string_view prompt_template);
  static PromptVocab from_tokens(std::vector<std::string> tokens);

  std::uint32_t id(std::string_view token) const;
  std::uint32_t unk_id() const noexcept { return unk_id_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> lookup_;
  std::uint32_t unk_id_ = 0;
};

/// Lowercases and splits on whitespace and punctuation; `<...>` markers stay whole.
std::vector<std::string> split_prompt_words(std::string_view text);

/// Replaces the template placeholders K, U, T1, T2 with their bucketed vocabulary tokens:
/// K becomes its literal (or <k> above 20), U becomes <user>, T1/T2 become <time>.
std::string render_prompt(std::string_view prompt_template, int top_k);

std::vector<std::uint32_t> tokenize_prompt_ids(std::string_view text, const PromptVocab& vocab);
/// m x d rows of `embedding` for the prompt tokens.
Matrix tokenize_prompt(std::string_view text, const PromptVocab& vocab, const Matrix& embedding);

/// Sinusoidal encoding: (pos, 2i) = sin(pos / 10000^(2i/d)), (pos, 2i+1) = cos(same).
Matrix positional_encoding(std::size_t length, std::size_t d);

struct FusedSequence {
  Matrix tokens;  // (k + m) x d
  std::size_t k = 0;
  std::size_t m = 0;
};

/// [G; P] + positional encoding; graph tokens take positions 0..k-1.
FusedSequence fuse_tokens(const Matrix& graph_tokens, const Matrix& prompt_tokens);
ad::Var fuse_tokens(ad::Var graph_tokens, ad::Var prompt_tokens);

}  // namespace hgrec

#include "hgrec/fusion.hpp"

#include <cctype>
#include <cmath>

#include "hgrec/error.hpp"

namespace hgrec {
namespace {

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) != 0 || c == '_' || u >= 0x80;
}

}  // namespace

std::vector<std::string> split_prompt_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '<') {
      const std::size_t close = text.find('>', i + 1);
      if (close != std::string_view::npos && close > i + 1) {
        const auto inner = text.substr(i + 1, close - i - 1);
        bool ok = true;
        for (char ch : inner) ok = ok && is_word_char(ch);
        if (ok) {
          flush();
          std::string marker(text.substr(i, close - i + 1));
          for (char& ch : marker) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
          words.push_back(std::move(marker));
          i = close;
          continue;
        }
      }
    }
    if (is_word_char(c)) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      flush();
    }
  }
  flush();
  return words;
}

std::string render_prompt(std::string_view prompt_template, int top_k) {
  std::string out;
  for (const auto& word : split_prompt_words(prompt_template)) {
    std::string token = word;
    if (word == "k") {
      token = (top_k >= 1 && top_k <= PromptVocab::kMaxLiteralK) ? std::to_string(top_k)
                                                                  : std::string(PromptVocab::kLargeK);
    } else if (word == "u") {
      token = PromptVocab::kUser;
    } else if (word == "t1" || word == "t2") {
      token = PromptVocab::kTime;
    }
    if (!out.empty()) out.push_back(' ');
    out += token;
  }
  return out;
}

PromptVocab PromptVocab::from_template(std::string_view prompt_template) {
  std::vector<std::string> tokens = {std::string(kUnk), std::string(kUser), std::string(kTime),
                                     std::string(kLargeK)};
  for (int k = 1; k <= kMaxLiteralK; ++k) tokens.push_back(std::to_string(k));
  for (auto& w : split_prompt_words(render_prompt(prompt_template, 1))) tokens.push_back(std::move(w));
  // from_tokens drops duplicates, keeping first appearance.
  return from_tokens(std::move(tokens));
}

PromptVocab PromptVocab::from_tokens(std::vector<std::string> tokens) {
  PromptVocab vocab;
  for (auto& t : tokens) {
    if (vocab.lookup_.try_emplace(t, static_cast<std::uint32_t>(vocab.tokens_.size())).second) {
      vocab.tokens_.push_back(std::move(t));
    }
  }
  auto unk = vocab.lookup_.find(std::string(kUnk));
  if (unk == vocab.lookup_.end()) {
    vocab.unk_id_ = static_cast<std::uint32_t>(vocab.tokens_.size());
    vocab.lookup_.emplace(std::string(kUnk), vocab.unk_id_);
    vocab.tokens_.emplace_back(kUnk);
  } else {
    vocab.unk_id_ = unk->second;
  }
  return vocab;
}

std::uint32_t PromptVocab::id(std::string_view token) const {
  auto it = lookup_.find(std::string(token));
  return it == lookup_.end() ? unk_id_ : it->second;
}

std::vector<std::uint32_t> tokenize_prompt_ids(std::string_view text, const PromptVocab& vocab) {
  const auto words = split_prompt_words(text);
  if (words.empty()) throw InvalidArgument("empty prompt");
  std::vector<std::uint32_t> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id(w));
  return ids;
}

Matrix tokenize_prompt(std::string_view text, const PromptVocab& vocab, const Matrix& embedding) {
  if (embedding.rows() != vocab.size()) {
    throw ShapeError("prompt embedding has " + std::to_string(embedding.rows()) +
                     " rows for a vocabulary of " + std::to_string(vocab.size()));
  }
  const auto ids = tokenize_prompt_ids(text, vocab);
  Matrix out(ids.size(), embedding.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy(embedding.row(ids[i]).begin(), embedding.row(ids[i]).end(), out.row(i).begin());
  }
  return out;
}

Matrix positional_encoding(std::size_t length, std::size_t d) {
  if (d % 2 != 0) throw InvalidArgument("dimension must be even, got " + std::to_string(d));
  if (length < 1) throw InvalidArgument("positional encoding length must be >= 1");
  Matrix pe(length, d);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

FusedSequence fuse_tokens(const Matrix& graph_tokens, const Matrix& prompt_tokens) {
  ad::Tape tape;
  auto fused = fuse_tokens(tape.constant_view(graph_tokens), tape.constant_view(prompt_tokens));
  return {fused.value(), graph_tokens.rows(), prompt_tokens.rows()};
}

ad::Var fuse_tokens(ad::Var graph_tokens, ad::Var prompt_tokens) {
  if (graph_tokens.cols() != prompt_tokens.cols()) {
    throw ShapeError("fuse_tokens: graph tokens have width " + std::to_string(graph_tokens.cols()) +
                     ", prompt tokens have width " + std::to_string(prompt_tokens.cols()));
  }
  const ad::Var parts[2] = {graph_tokens, prompt_tokens};
  ad::Var stacked = ad::concat_rows(parts);
  return ad::add(stacked, stacked.tape()->constant(
                              positional_encoding(stacked.rows(), stacked.cols())));
}

}  // namespace hgrec

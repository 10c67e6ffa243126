#include <doctest.h>

#include <cmath>

#include "hgrec/error.hpp"
#include "hgrec/fusion.hpp"
#include "hgrec/param_binder.hpp"
#include "support.hpp"

using namespace hgrec;

TEST_CASE("tokenize: split rule, lookup, unknown words") {
  CHECK(split_prompt_words("Recommend top-5 items") ==
        std::vector<std::string>{"recommend", "top", "5", "items"});
  const auto vocab = PromptVocab::from_tokens({"recommend", "top", "5", "items"});
  Matrix emb(vocab.size(), 3);
  for (std::size_t r = 0; r < emb.rows(); ++r)
    for (std::size_t c = 0; c < 3; ++c) emb(r, c) = double(r * 10 + c);

  const Matrix p = tokenize_prompt("Recommend top-5 items", vocab, emb);
  CHECK(p.rows() == 4);
  for (std::size_t r = 0; r < 4; ++r) CHECK(p(r, 0) == double(r * 10));

  const Matrix one = tokenize_prompt("ITEMS", vocab, emb);
  CHECK(one == Matrix::row_vector(emb.row(vocab.id("items"))));

  const Matrix unk = tokenize_prompt("zebra quasar, nebula!", vocab, emb);
  REQUIRE(unk.rows() == 3);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(Matrix::row_vector(unk.row(r)) == Matrix::row_vector(emb.row(vocab.unk_id())));
  }

  CHECK_THROWS_WITH_AS(tokenize_prompt("  \t ", vocab, emb), doctest::Contains("empty prompt"), InvalidArgument);
}

TEST_CASE("default template renders into the finite vocabulary") {
  const auto vocab = PromptVocab::from_template(kDefaultPromptTemplate);
  const std::string text = render_prompt(kDefaultPromptTemplate, 5);
  CHECK(text.find("<user>") != std::string::npos);
  CHECK(text.find("top 5") != std::string::npos);
  for (auto id : tokenize_prompt_ids(text, vocab)) CHECK(id != vocab.unk_id());
  CHECK(render_prompt("top-K", 50) == "top <k>");
}

TEST_CASE("positional encoding values") {
  const Matrix pe = positional_encoding(3, 4);
  for (std::size_t c = 0; c < 4; ++c) CHECK(pe(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
  CHECK(std::abs(pe(1, 0) - std::sin(1.0)) < 1e-9);
  CHECK(std::abs(pe(1, 1) - std::cos(1.0)) < 1e-9);
  CHECK(std::abs(pe(1, 2) - std::sin(0.01)) < 1e-9);
  CHECK(std::abs(pe(1, 3) - std::cos(0.01)) < 1e-9);
  CHECK(positional_encoding(3, 4) == pe);
  CHECK_THROWS_WITH_AS(positional_encoding(2, 5), doctest::Contains("even"), InvalidArgument);
}

TEST_CASE("fuse: shape, additive identity, lossless decomposition") {
  Rng rng(1);
  const Matrix g = testing::random_matrix(5, 128, rng);
  const Matrix p = testing::random_matrix(7, 128, rng);
  const auto f = fuse_tokens(g, p);
  CHECK(f.tokens.rows() == 12);
  CHECK(f.tokens.cols() == 128);
  CHECK(f.k == 5);
  CHECK(f.m == 7);

  CHECK(fuse_tokens(Matrix(5, 128), Matrix(7, 128)).tokens == positional_encoding(12, 128));

  const Matrix back = f.tokens - positional_encoding(12, 128);
  for (std::size_t r = 0; r < 12; ++r) {
    const auto src = r < 5 ? g.row(r) : p.row(r - 5);
    for (std::size_t c = 0; c < 128; ++c) CHECK(std::abs(back(r, c) - src[c]) < 1e-12);
  }

  // Rewording the prompt leaves graph rows untouched.
  const auto f2 = fuse_tokens(g, testing::random_matrix(3, 128, rng));
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(Matrix::row_vector(f2.tokens.row(r)) == Matrix::row_vector(f.tokens.row(r)));
  }

  try {
    fuse_tokens(Matrix(5, 8), Matrix(2, 6));
    FAIL("width mismatch accepted");
  } catch (const Error& e) {
    const std::string what = e.what();
    CHECK(what.find('8') != std::string::npos);
    CHECK(what.find('6') != std::string::npos);
  }
}

TEST_CASE("gradient reaches both graph tokens and prompt embeddings") {
  Rng rng(2);
  Matrix g = testing::random_matrix(5, 8, rng);
  Matrix p = testing::random_matrix(4, 8, rng);
  const Matrix w = testing::random_matrix(8, 1, rng);
  auto objective = [&](ParamBinder& bind) {
    ad::Var fused = fuse_tokens(bind(g), bind(p));
    return ad::sum(ad::sigmoid(ad::matmul(ad::mean_rows(ad::tanh(fused)), bind.tape().constant(w))));
  };
  Matrix gg(5, 8), gp(4, 8);
  {
    ad::Tape tape;
    ParamBinder bind(tape, {{&g, &gg}, {&p, &gp}});
    tape.backward(objective(bind));
  }
  auto value = [&] {
    ad::Tape tape;
    ParamBinder bind(tape);
    return objective(bind).value()(0, 0);
  };
  CHECK(squared_norm(gg) > 0);
  CHECK(squared_norm(gp) > 0);
  CHECK(max_abs_diff(gg, testing::numeric_gradient(g, value)) < 1e-7);
  CHECK(max_abs_diff(gp, testing::numeric_gradient(p, value)) < 1e-7);
}

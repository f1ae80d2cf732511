#include "stochlq/config.hpp"

#include <gtest/gtest.h>

using namespace stochlq;

namespace {

const char* kScalar = R"({
  "dims": {"n": 1, "k": 1, "d": 1},
  "model": {"A": -1, "B": 1, "C": [0.2], "D": [0.1], "S": 1, "f": [1]},
  "x0": [1],
  "horizon": {"type": "finite", "T": 1},
  "lattice": {"depth": 4}
})";

ErrorKind kind_of(const std::string& text) {
  try {
    validate(load_config_text(text));
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error for " << text;
  return ErrorKind::ConfigError;
}

std::string key_of(const std::string& text) {
  try {
    validate(load_config_text(text));
  } catch (const Error& e) {
    return e.key();
  }
  return {};
}

std::string with(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  return text.replace(pos, from.size(), to);
}

}  // namespace

TEST(Config, ParsesScalarScenario) {
  const ScenarioConfig cfg = load_config_text(kScalar);
  const CoefficientModel m = validate(cfg);
  EXPECT_EQ(m.kind(), CoefficientKind::Constant);
  EXPECT_DOUBLE_EQ(cfg.step(), 0.25);
  EXPECT_TRUE(cfg.horizon.terminal.isZero());
  EXPECT_EQ(cfg.lattice.scheme, Scheme::Exact);
}

TEST(Config, NegativeSNamesTheKey) {
  const std::string bad = with(kScalar, "\"S\": 1", "\"S\": -1");
  EXPECT_EQ(kind_of(bad), ErrorKind::NegativeS);
  EXPECT_EQ(key_of(bad), "model.S");
}

TEST(Config, NonSymmetricS) {
  const std::string text = R"({
    "dims": {"n": 2, "k": 1, "d": 1},
    "model": {"A": [[0, 1], [0, 0]], "B": [[0], [1]], "S": [[1, 0.5], [0, 1]]}
  })";
  EXPECT_EQ(kind_of(text), ErrorKind::NonSymmetricS);
}

TEST(Config, ShapeErrors) {
  EXPECT_EQ(kind_of(with(kScalar, "\"C\": [0.2]", "\"C\": [0.2, 0.1]")), ErrorKind::BadDimensions);
  EXPECT_EQ(kind_of(with(kScalar, "\"x0\": [1]", "\"x0\": [1, 2]")), ErrorKind::BadDimensions);
  EXPECT_EQ(kind_of(with(kScalar, "\"n\": 1", "\"n\": 0")), ErrorKind::BadDimensions);
}

TEST(Config, UnknownKeysAndMalformedJson) {
  EXPECT_EQ(kind_of(with(kScalar, "\"x0\"", "\"xo\"")), ErrorKind::ConfigError);
  EXPECT_EQ(kind_of("{\"dims\": "), ErrorKind::ConfigError);
  EXPECT_EQ(kind_of(with(kScalar, "\"finite\"", "\"forever\"")), ErrorKind::ConfigError);
}

TEST(Config, DeclaredBoundIsEnforced) {
  const std::string bad = with(kScalar, "\"A\": -1",
                               "\"A\": {\"base\": -1, \"time\": {\"amp\": 4}, \"bound\": 1.5}");
  EXPECT_EQ(kind_of(bad), ErrorKind::UnboundedCoefficient);
}

TEST(Config, InfiniteHorizonNeedsDecayingForcing) {
  const std::string inf = with(kScalar, "\"type\": \"finite\", \"T\": 1", "\"type\": \"infinite\"");
  EXPECT_EQ(kind_of(inf), ErrorKind::ForcingNotSquareIntegrable);
  // a constant part cannot decay, whatever the tag says
  const std::string lying =
      with(inf, "\"f\": [1]", "\"f\": {\"base\": [1], \"integrability\": \"decaying\", \"rate\": 1}");
  EXPECT_EQ(kind_of(lying), ErrorKind::ForcingNotSquareIntegrable);
  const std::string honest = with(
      inf, "\"f\": [1]",
      "\"f\": {\"time\": {\"amp\": [1], \"shape\": \"exp\", \"rate\": 1}, \"integrability\": "
      "\"decaying\", \"rate\": 1}");
  EXPECT_NO_THROW(validate(load_config_text(honest)));
}

TEST(Config, ErgodicNeedsEpsilon) {
  const std::string text = with(kScalar, "\"f\": [1]", "\"f\": [1], \"ergodic\": true");
  EXPECT_EQ(kind_of(text), ErrorKind::ConfigError);
  EXPECT_EQ(key_of(text), "model.epsilon");
}

TEST(Config, FactorModelsAreValidatedOnEveryNode) {
  const std::string text = with(
      kScalar, "\"S\": 1",
      "\"S\": {\"base\": 0.5, \"factor\": {\"amp\": 1, \"source\": \"path_sum\", \"map\": \"clip\", "
      "\"scale\": 4}}");
  // S dips to -0.5 once |4 W| >= 1
  EXPECT_EQ(kind_of(text), ErrorKind::NegativeS);
}

TEST(Config, ExitCodeClasses) {
  EXPECT_EQ(exit_code_for(ErrorKind::NegativeS), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::NonPositiveAlpha), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::NotStabilizable), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::NoConvergence), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::GridMismatch), 4);
  EXPECT_EQ(exit_code_for(ErrorKind::MissingChild), 4);
}

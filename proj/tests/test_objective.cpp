#include <doctest.h>

#include <cmath>
#include <map>
#include <string>

#include "discrim/error.hpp"
#include "discrim/objective.hpp"
#include "discrim/rng.hpp"
#include "support/oracles.hpp"

using namespace discrim;
using namespace discrim::loss;

namespace {

const std::string kLogits{kLogitsTap};
const std::string kHidden{kHiddenTap};

std::map<std::string, std::size_t> widths(std::size_t classes, std::size_t hidden) {
  return {{kLogits, classes}, {kHidden, hidden}};
}

ObjectiveConfig combined(double l1, double l2) {
  ObjectiveConfig cfg;
  cfg.terms = {{AuxKind::adaptive_discriminant, l1, kLogits}, {AuxKind::adaptive_center, l2, kHidden}};
  cfg.alpha = 0.99;
  return cfg;
}

}  // namespace

TEST_CASE("component names") {
  CHECK(component_name(AuxKind::discriminant) == "L_D");
  CHECK(component_name(AuxKind::adaptive_discriminant) == "L_AD");
  CHECK(component_name(AuxKind::center) == "L_C");
  CHECK(component_name(AuxKind::adaptive_center) == "L_AC");
}

TEST_CASE("config validation") {
  ObjectiveConfig cfg;
  cfg.terms = {{AuxKind::center, -1.0, kHidden}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.terms = {{AuxKind::discriminant, 1.0, kHidden}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.terms = {{AuxKind::center, 1.0, kHidden}, {AuxKind::center, 2.0, kHidden}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.terms = {{AuxKind::adaptive_center, 1.0, kHidden}};
  cfg.alpha = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.alpha = 0.99;
  CHECK_NOTHROW(cfg.validate());
  cfg.terms = {{AuxKind::center, 1.0, kHidden}};
  cfg.beta = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("unresolved tap points are rejected") {
  ObjectiveConfig cfg;
  cfg.terms = {{AuxKind::center, 1.0, "nowhere"}};
  CHECK_THROWS_AS(Objective(cfg, 3, widths(3, 4)), ConfigError);
  CHECK_THROWS_AS(Objective(ObjectiveConfig{}, 3, {{kHidden, 4}}), ConfigError);
  CHECK_THROWS_AS(Objective(ObjectiveConfig{}, 3, widths(5, 4)), ConfigError);

  Objective obj(combined(0.001, 1.0), 3, widths(3, 4));
  Rng rng(1);
  const TapMap only_logits{{kLogits, oracle::random_tensor({4, 3}, rng)}};
  CHECK_THROWS_AS(obj.evaluate(only_logits, oracle::random_onehot(4, 3, rng)), ConfigError);
}

TEST_CASE("zero auxiliary weights reproduce cross-entropy bitwise") {
  Rng rng(2);
  const Tensor z = oracle::random_tensor({6, 3}, rng);
  const Tensor x = oracle::random_tensor({6, 4}, rng);
  const Tensor t = oracle::random_onehot(6, 3, rng);
  ObjectiveConfig cfg;
  cfg.terms = {{AuxKind::discriminant, 0.0, kLogits},
               {AuxKind::adaptive_discriminant, 0.0, kLogits},
               {AuxKind::center, 0.0, kHidden},
               {AuxKind::adaptive_center, 0.0, kHidden}};
  Objective obj(cfg, 3, widths(3, 4));
  const auto report = obj.evaluate({{kLogits, z}, {kHidden, x}}, t);
  const auto ce = softmax_cross_entropy(z, t);
  CHECK(report.total == ce.loss);
  CHECK(report.gradients.at(kLogits) == ce.grad);
  for (double g : report.gradients.at(kHidden).data()) CHECK(g == 0.0);

  Objective bare(ObjectiveConfig{}, 3, widths(3, 4));
  const auto plain = bare.evaluate({{kLogits, z}, {kHidden, x}}, t);
  CHECK(plain.total == ce.loss);
  CHECK(plain.components.size() == 1);
  CHECK(plain.gradients.count(kHidden) == 0);
}

TEST_CASE("combined total equals the independent component sum") {
  Rng rng(3);
  const double l1 = 0.001, l2 = 1.0;
  Objective obj(combined(l1, l2), 3, widths(3, 4));
  stats::NeuronClassStats shadow_stats(3, 0.99);
  stats::CenterBank shadow_bank(3, 4, stats::CenterUpdateMode::adaptive, 0.99);
  for (int step = 0; step < 20; ++step) {
    const Tensor z = oracle::random_tensor({8, 3}, rng, -3.0, 3.0);
    const Tensor x = oracle::random_tensor({8, 4}, rng, -3.0, 3.0);
    const Tensor t = oracle::random_onehot(8, 3, rng);
    const auto report = obj.evaluate({{kLogits, z}, {kHidden, x}}, t);
    const double ls = softmax_cross_entropy(z, t).loss;
    const auto ad = adaptive_discriminant(z, t, shadow_stats, 1e-8);
    const auto ac = adaptive_center_loss(x, t, shadow_bank);
    CHECK(std::abs(report.total - (ls + l1 * ad.loss + l2 * ac.loss)) < 1e-12);
    CHECK(std::abs(report.total - (report.components.at("L_S") + l1 * report.components.at("L_AD") +
                                   l2 * report.components.at("L_AC"))) < 1e-12);
    const Tensor expect_logits = softmax_cross_entropy(z, t).grad + ad.grad * l1;
    CHECK(oracle::max_relative_error(report.gradients.at(kLogits), expect_logits, 1e-12) < 1e-12);
    CHECK(oracle::max_relative_error(report.gradients.at(kHidden), ac.grad * l2, 1e-12) < 1e-12);
    for (const auto& [tap, g] : report.gradients) CHECK(g.all_finite());
  }
}

TEST_CASE("terms on the same tap add their weighted gradients") {
  Rng rng(4);
  ObjectiveConfig cfg;
  cfg.terms = {{AuxKind::discriminant, 0.5, kLogits}, {AuxKind::adaptive_discriminant, 0.25, kLogits}};
  Objective obj(cfg, 3, widths(3, 2));
  const Tensor z = oracle::random_tensor({6, 3}, rng);
  const Tensor t = oracle::random_onehot(6, 3, rng);
  const auto report = obj.evaluate({{kLogits, z}, {kHidden, Tensor({6, 2})}}, t);
  stats::NeuronClassStats st(3, cfg.alpha);
  const Tensor expect = softmax_cross_entropy(z, t).grad + discriminant_batch(z, t, 1e-8).grad * 0.5 +
                        adaptive_discriminant(z, t, st, 1e-8).grad * 0.25;
  CHECK(oracle::max_relative_error(report.gradients.at(kLogits), expect, 1e-12) < 1e-12);
}

TEST_CASE("mini-batch centers move only in finish_step") {
  Rng rng(5);
  ObjectiveConfig cfg;
  cfg.terms = {{AuxKind::center, 1.0, kHidden}};
  cfg.beta = 0.5;
  Objective obj(cfg, 2, widths(2, 2));
  const Tensor x = Tensor::matrix(2, 2, {2, 0, 0, 4});
  const Tensor t = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const TapMap taps{{kLogits, Tensor({2, 2})}, {kHidden, x}};
  const auto r = obj.evaluate(taps, t);
  CHECK(r.components.at("L_C") == doctest::Approx(10.0));
  CHECK(obj.center_bank()->center(0)[0] == 0.0);
  obj.finish_step(taps, t);
  // c0 <- 0 - 0.5 * (0 - 2) / 2 = 0.5 ; c1 <- 0 - 0.5 * (0 - 4) / 2 = 1
  CHECK(obj.center_bank()->center(0)[0] == doctest::Approx(0.5));
  CHECK(obj.center_bank()->center(1)[1] == doctest::Approx(1.0));
}

TEST_CASE("statistics reset and snapshot round trip") {
  Rng rng(6);
  Objective obj(combined(0.001, 1.0), 3, widths(3, 4));
  const Tensor z = oracle::random_tensor({6, 3}, rng);
  const Tensor x = oracle::random_tensor({6, 4}, rng);
  const Tensor t = oracle::random_onehot(6, 3, rng);
  const TapMap taps{{kLogits, z}, {kHidden, x}};
  obj.evaluate(taps, t);
  const auto snap = obj.snapshot();
  CHECK(snap.count("objective.L_AD") == 1);
  CHECK(snap.count("objective.L_AC") == 1);

  Objective copy(combined(0.001, 1.0), 3, widths(3, 4));
  copy.restore(snap);
  const auto a = obj.evaluate(taps, t);
  const auto b = copy.evaluate(taps, t);
  CHECK(a.total == b.total);

  obj.reset_statistics();
  CHECK(obj.neuron_stats()->neuron(0).within_var.value() == 0.0);
  CHECK(obj.center_bank()->centers() == Tensor({3, 4}));
}

TEST_CASE("report csv rows leave absent components empty") {
  LossReport r;
  r.total = 1.5;
  r.components = {{"L_S", 1.25}, {"L_AC", 0.25}};
  CHECK(report_csv_header() == "step,total,L_S,L_D,L_AD,L_C,L_AC");
  CHECK(report_csv_row(3, r) == "3,1.5,1.25,,,,0.25");
  CHECK(format_number(0.1) == "0.1");
}

TEST_CASE("non-finite logits raise a numeric error") {
  Objective obj(ObjectiveConfig{}, 2, widths(2, 2));
  Tensor z({1, 2});
  z[0] = std::nan("");
  CHECK_THROWS_AS(obj.evaluate({{kLogits, z}, {kHidden, Tensor({1, 2})}}, Tensor::matrix(1, 2, {1, 0})),
                  NumericError);
}

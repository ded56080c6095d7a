#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "predbal/freq_model.hpp"
#include "predbal/rng.hpp"
#include "predbal/scorer.hpp"
#include "predbal/semantic_adjustment.hpp"
#include "predbal/synthetic.hpp"
#include "test_util.hpp"

using namespace predbal;

TEST_CASE("build_confusion counts label/prediction pairs") {
  const std::vector<int> gold = {0, 0, 1};
  const std::vector<int> pred = {0, 1, 1};
  const ConfusionMatrix c = build_confusion(gold, pred, 2);
  CHECK(c.at(0, 0) == 1);
  CHECK(c.at(0, 1) == 1);
  CHECK(c.at(1, 0) == 0);
  CHECK(c.at(1, 1) == 1);
  CHECK(c.total() == 3);

  SUBCASE("matches the naive counting oracle on random lists") {
    Rng rng(404);
    for (int trial = 0; trial < 20; ++trial) {
      const int k = 2 + static_cast<int>(rng.below(8));
      std::vector<int> g(50), p(50);
      for (int i = 0; i < 50; ++i) {
        g[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        p[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
      }
      CHECK(build_confusion(g, p, k).counts == oracle::confusion(g, p, k));
    }
  }
  SUBCASE("perfect predictor gives a diagonal with class counts") {
    const std::vector<int> labels = {2, 0, 2, 1, 2};
    const ConfusionMatrix d = build_confusion(labels, labels, 3);
    CHECK(d.at(2, 2) == 3);
    CHECK(d.at(0, 0) == 1);
    CHECK(d.at(1, 1) == 1);
    CHECK(d.total() == 5);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS((void)build_confusion(std::vector<int>{0}, std::vector<int>{0, 1}, 2),
                    LengthMismatch);
    CHECK_THROWS_AS((void)build_confusion(std::vector<int>{5}, std::vector<int>{0}, 2), InvalidId);
  }
}

TEST_CASE("confusion mass flows child to parent on relabeled synthetic data") {
  SynthConfig c;
  c.roots = 2;
  c.children_per_root = 3;
  c.solo_roots = 1;
  c.object_classes = 14;
  c.train_images = 400;
  c.val_images = 0;
  c.test_images = 50;
  c.triplets_per_image = 12;
  c.zipf_exponent = 1.3;
  c.relabel_prob = 0.8;
  const auto bundle = generate_synthetic(c, 23);
  const auto train = bundle.train();
  const FreqModel freq = FreqModel::fit(train, 1.0);
  std::vector<int> gold, pred;
  for (const Triplet& t : train.triplets()) {
    gold.push_back(t.pred);
    pred.push_back(freq.predict(t.subj, t.obj));
  }
  const ConfusionMatrix conf = build_confusion(gold, pred, train.predicates().size());
  for (int child = 0; child < train.predicates().size(); ++child) {
    if (!bundle.parents.is_child(child)) continue;
    const int parent = bundle.parents.parent_of(child);
    for (int l = 0; l < train.predicates().size(); ++l) {
      if (l == child || l == parent) continue;
      CHECK(conf.at(child, parent) >= conf.at(child, l));
    }
  }
}

TEST_CASE("row_normalize") {
  const std::vector<double> m = {2, 2, 1, 3};
  const auto out = row_normalize(m, 2);
  CHECK(out == std::vector<double>{0.5, 0.5, 0.25, 0.75});

  SUBCASE("identity is a fixed point") {
    const std::vector<double> eye = {1, 0, 0, 1};
    CHECK(row_normalize(eye, 2) == eye);
  }
  SUBCASE("zero row becomes one-hot on the diagonal") {
    const std::vector<double> z = {0, 0, 1, 3};
    const auto o = row_normalize(z, 2);
    CHECK(o[0] == 1.0);
    CHECK(o[1] == 0.0);
  }
  SUBCASE("negative entries are rejected") {
    const std::vector<double> neg = {1, -0.5, 0, 1};
    CHECK_THROWS_AS((void)row_normalize(neg, 2), NegativeEntry);
  }
}

TEST_CASE("build_transition") {
  SUBCASE("identity input stays identity for any alpha") {
    const std::vector<double> eye = {1, 0, 0, 1};
    for (double alpha : {0.0, 0.3, 1.0, 10.0}) {
      const auto t = TransitionMatrix::build(eye, 2, alpha, "test");
      CHECK(t.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(t.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(t.at(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("uniform 2x2 with alpha 1") {
    const std::vector<double> u = {0.5, 0.5, 0.5, 0.5};
    const auto t = TransitionMatrix::build(u, 2, 1.0, "test");
    CHECK(t.at(0, 0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(t.at(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(t.at(1, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(t.at(1, 1) == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("negative alpha is rejected") {
    const std::vector<double> eye = {1, 0, 0, 1};
    CHECK_THROWS_AS((void)TransitionMatrix::build(eye, 2, -0.1, "t"), InvalidAlpha);
  }
  SUBCASE("rows that do not sum to 1 are rejected") {
    const std::vector<double> bad = {0.9, 0.2, 0.5, 0.5};
    CHECK_THROWS_AS((void)TransitionMatrix::build(bad, 2, 1.0, "t"), ShapeMismatch);
  }
}

TEST_CASE("transition properties over random matrices") {
  Rng rng(31337);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(19));  // K <= 20
    std::vector<double> raw(static_cast<std::size_t>(k) * static_cast<std::size_t>(k));
    for (double& v : raw) v = rng.unit() * 10.0;
    const auto c_prime = row_normalize(raw, k);
    double prev_diag_min = 0.0;
    for (double alpha : {0.0, 0.3, 0.6, 1.0}) {
      const auto t = TransitionMatrix::build(c_prime, k, alpha, "prop");
      double diag_min = 1.0;
      for (int r = 0; r < k; ++r) {
        double sum = 0.0;
        for (int c = 0; c < k; ++c) {
          CHECK(t.at(r, c) >= 0.0);
          sum += t.at(r, c);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        // diagonal damping floor
        CHECK(t.at(r, r) >= c_prime[static_cast<std::size_t>(r) * static_cast<std::size_t>(k) +
                                    static_cast<std::size_t>(r)] /
                                (1.0 + alpha) -
                                1e-12);
        diag_min = std::min(diag_min, t.at(r, r));
      }
      CHECK(diag_min >= prev_diag_min - 1e-12);  // non-decreasing in alpha
      prev_diag_min = diag_min;
    }
    // identity limit at alpha = 1e6
    const auto tinf = TransitionMatrix::build(c_prime, k, 1e6, "limit");
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < k; ++c)
        CHECK(std::abs(tinf.at(r, c) - (r == c ? 1.0 : 0.0)) < 1e-5);
  }
}

TEST_CASE("apply_adjustment") {
  SUBCASE("identity passes scores through") {
    const auto t = TransitionMatrix::identity(3);
    const std::vector<double> z = {0.3, -1.2, 4.0};
    CHECK(apply_adjustment(t, z) == z);
    CHECK(apply_adjustment(t, z, Orientation::Cols) == z);
  }
  SUBCASE("a raw common spike lifts the informative label") {
    // K = 2: (on, standing on)
    std::vector<double> values = {1.0, 0.0, 0.6, 0.4};
    const std::vector<double> z = {5.0, 0.0};
    const auto a = apply_adjustment(values, 2, z, Orientation::Rows);
    CHECK(a[0] == doctest::Approx(5.0));
    CHECK(a[1] == doctest::Approx(3.0));
  }
  SUBCASE("orientations are transposes of each other") {
    Rng rng(8);
    std::vector<double> raw(16);
    for (double& v : raw) v = rng.unit();
    const auto c_prime = row_normalize(raw, 4);
    const auto t = TransitionMatrix::build(c_prime, 4, 0.5, "o");
    std::vector<double> z = {1.0, -2.0, 0.5, 3.0};
    const auto rows = apply_adjustment(t, z, Orientation::Rows);
    // transpose manually
    std::vector<double> tt(16);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        tt[static_cast<std::size_t>(c) * 4 + static_cast<std::size_t>(r)] = t.at(r, c);
    const auto cols = apply_adjustment(tt, 4, z, Orientation::Cols);
    for (int i = 0; i < 4; ++i)
      CHECK(rows[static_cast<std::size_t>(i)] ==
            doctest::Approx(cols[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
  SUBCASE("linearity on random vectors") {
    Rng rng(99);
    std::vector<double> raw(25);
    for (double& v : raw) v = rng.unit();
    const auto t = TransitionMatrix::build(row_normalize(raw, 5), 5, 1.0, "lin");
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> z1(5), z2(5);
      for (int i = 0; i < 5; ++i) {
        z1[static_cast<std::size_t>(i)] = rng.unit() * 8 - 4;
        z2[static_cast<std::size_t>(i)] = rng.unit() * 8 - 4;
      }
      const double a = rng.unit() * 4 - 2;
      const double b = rng.unit() * 4 - 2;
      std::vector<double> mix(5);
      for (int i = 0; i < 5; ++i)
        mix[static_cast<std::size_t>(i)] =
            a * z1[static_cast<std::size_t>(i)] + b * z2[static_cast<std::size_t>(i)];
      const auto lhs = apply_adjustment(t, mix);
      const auto r1 = apply_adjustment(t, z1);
      const auto r2 = apply_adjustment(t, z2);
      for (int i = 0; i < 5; ++i)
        CHECK(lhs[static_cast<std::size_t>(i)] ==
              doctest::Approx(a * r1[static_cast<std::size_t>(i)] +
                              b * r2[static_cast<std::size_t>(i)])
                  .epsilon(1e-9));
    }
  }
  SUBCASE("errors") {
    const auto t = TransitionMatrix::identity(3);
    CHECK_THROWS_AS((void)apply_adjustment(t, std::vector<double>{1.0, 2.0}), ShapeMismatch);
    const std::vector<double> inf = {1.0, std::numeric_limits<double>::infinity(), 0.0};
    CHECK_THROWS_AS((void)apply_adjustment(t, inf), NonFiniteInput);
  }
}

TEST_CASE("adjustment does not lose informative argmaxes on relabeled synthetic data") {
  // Across several seeds: among test pairs whose latent predicate is
  // informative, the adjusted scorer recovers at least as many as the raw one.
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    SynthConfig c;
    c.roots = 2;
    c.children_per_root = 3;
    c.solo_roots = 1;
    c.object_classes = 14;
    c.train_images = 350;
    c.val_images = 0;
    c.test_images = 120;
    c.triplets_per_image = 12;
    c.zipf_exponent = 1.3;
    c.relabel_prob = 0.8;
    const auto bundle = generate_synthetic(c, seed);
    const auto train = bundle.train();
    const auto test = bundle.test();
    const FreqModel freq = FreqModel::fit(train, 1.0);
    std::vector<int> gold, pred;
    for (const Triplet& t : train.triplets()) {
      gold.push_back(t.pred);
      pred.push_back(freq.predict(t.subj, t.obj));
    }
    const auto c_prime =
        row_normalize(build_confusion(gold, pred, train.predicates().size()));
    const auto t = TransitionMatrix::build(c_prime, train.predicates().size(), 1.0, "sa");

    std::vector<int> latent, raw_pred, adj_pred;
    for (const Triplet& g : test.triplets()) {
      latent.push_back(g.pred);  // test labels are the latent labels
      const auto z = freq.predict_logits(g.subj, g.obj);
      const auto a = apply_adjustment(t, z);
      raw_pred.push_back(
          static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()));
      adj_pred.push_back(
          static_cast<int>(std::max_element(a.begin(), a.end()) - a.begin()));
    }
    const double raw_frac = oracle::informative_recovery(latent, raw_pred, bundle.parents);
    const double adj_frac = oracle::informative_recovery(latent, adj_pred, bundle.parents);
    CHECK(adj_frac >= raw_frac);
  }
}

TEST_CASE("transition json and csv exports") {
  testutil::TempDir tmp("sa_io");
  const std::vector<double> u = {0.5, 0.5, 0.5, 0.5};
  const auto t = TransitionMatrix::build(u, 2, 1.0, "unit-test");
  t.save(tmp.path("t.json"));
  const auto back = TransitionMatrix::load(tmp.path("t.json"));
  CHECK(back.alpha() == 1.0);
  CHECK(back.provenance() == "unit-test");
  CHECK(back.checksum() == t.checksum());
  CHECK(std::vector<double>(back.values().begin(), back.values().end()) ==
        std::vector<double>(t.values().begin(), t.values().end()));

  write_matrix_csv(tmp.path("t.csv"), t.values(), 2, {"on", "standing on"});
  const std::string csv = testutil::read_file(tmp.path("t.csv"));
  CHECK(csv.rfind("on,standing on\n", 0) == 0);
  CHECK(csv.find("0.75") != std::string::npos);
}

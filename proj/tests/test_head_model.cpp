#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "predbal/freq_model.hpp"
#include "predbal/head_model.hpp"
#include "predbal/rng.hpp"
#include "predbal/scorer.hpp"
#include "predbal/synthetic.hpp"
#include "test_util.hpp"

using namespace predbal;

namespace {

Dataset one_sample_dataset() {
  const ObjectVocab objects = ObjectVocab::from_names({"a", "b"});
  const PredicateVocab preds = PredicateVocab::from_names({"p0", "p1", "p2"});
  return Dataset(objects, preds, {{0, 0, 1, 2}}, "one");
}

// Random row-stochastic transition for gradient tests.
TransitionMatrix random_transition(int k, Rng& rng) {
  std::vector<double> raw(static_cast<std::size_t>(k) * static_cast<std::size_t>(k));
  for (double& v : raw) v = rng.unit() + 1e-3;
  return TransitionMatrix::build(row_normalize(raw, k), k, 0.5, "grad-test");
}

}  // namespace

TEST_CASE("init shapes and determinism") {
  const HeadModel a = HeadModel::init(10, 5, 8, 77);
  CHECK(a.d() == 21);
  CHECK(a.embed.size() == 8u * 21u);
  CHECK(a.recog.size() == 5u * 8u);
  CHECK(a.bias.size() == 5u);
  const HeadModel b = HeadModel::init(10, 5, 8, 77);
  CHECK(a.embed == b.embed);
  CHECK(a.recog == b.recog);
  const HeadModel c = HeadModel::init(10, 5, 8, 78);
  CHECK(a.embed != c.embed);
  for (double w : a.embed) CHECK(std::abs(w) <= 1.0 / std::sqrt(21.0));
  for (double w : a.recog) CHECK(std::abs(w) <= 1.0 / std::sqrt(8.0));
  CHECK_THROWS_AS((void)HeadModel::init(0, 5, 8, 1), InvalidDims);

  SUBCASE("forward logits are finite and softmax-normalized") {
    const auto z = a.forward_pair(3, 7);
    double sum = 0.0;
    for (double v : z) {
      CHECK(std::isfinite(v));
    }
    for (double v : softmax(z)) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("forward matches the sparse fast path and scales linearly in W") {
  HeadModel m = HeadModel::init(6, 4, 5, 3);
  const auto f = make_feature(2, 4, 6);
  const auto dense = m.forward(f);
  const auto sparse = m.forward_pair(2, 4);
  for (std::size_t i = 0; i < dense.size(); ++i)
    CHECK(dense[i] == doctest::Approx(sparse[i]).epsilon(1e-12));

  SUBCASE("zero weights leave only the bias") {
    std::fill(m.embed.begin(), m.embed.end(), 0.0);
    std::fill(m.recog.begin(), m.recog.end(), 0.0);
    m.bias = {0.1, 0.2, -0.3, 0.0};
    const auto z = m.forward_pair(0, 1);
    CHECK(z[0] == doctest::Approx(0.1));
    CHECK(z[1] == doctest::Approx(0.2));
    CHECK(z[2] == doctest::Approx(-0.3));
  }
  SUBCASE("doubling W doubles the logits when bias is zero") {
    std::fill(m.bias.begin(), m.bias.end(), 0.0);
    const auto before = m.forward_pair(1, 2);
    for (double& w : m.recog) w *= 2.0;
    const auto after = m.forward_pair(1, 2);
    for (std::size_t i = 0; i < before.size(); ++i)
      CHECK(after[i] == doctest::Approx(2.0 * before[i]).epsilon(1e-12));
  }
  SUBCASE("wrong feature length is rejected") {
    CHECK_THROWS_AS((void)m.forward(std::vector<double>{1.0, 2.0}), ShapeMismatch);
  }
}

TEST_CASE("grad_check: analytic gradients match central differences") {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int s = 3 + static_cast<int>(rng.below(5));
    const int k = 2 + static_cast<int>(rng.below(5));
    const int h = 2 + static_cast<int>(rng.below(6));
    const HeadModel m = HeadModel::init(s, k, h, rng.next_u64());
    const Triplet sample{0, static_cast<int>(rng.below(static_cast<std::uint64_t>(s))),
                         static_cast<int>(rng.below(static_cast<std::uint64_t>(s))),
                         static_cast<int>(rng.below(static_cast<std::uint64_t>(k)))};
    std::optional<TransitionMatrix> t;
    if (trial % 2 == 1) t = random_transition(k, rng);
    const double err = grad_check(m, sample, t, 1e-4);
    worst = std::max(worst, err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("grad_check with identity transition equals the no-transition case") {
  const HeadModel m = HeadModel::init(5, 4, 6, 9);
  const Triplet sample{0, 1, 3, 2};
  const auto id = TransitionMatrix::identity(4);
  // identical analytic gradients: check both against the independent naive
  // loss oracle at a handful of parameters
  detail::HeadGradients g_plain, g_id;
  g_plain.resize_like(m, false);
  g_id.resize_like(m, false);
  const double l_plain = detail::accumulate_sample_gradient(m, 1, 3, 2, nullptr,
                                                            Orientation::Rows, false, 1.0, g_plain);
  const double l_id = detail::accumulate_sample_gradient(m, 1, 3, 2, id.values().data(),
                                                         Orientation::Rows, false, 1.0, g_id);
  CHECK(l_plain == doctest::Approx(l_id).epsilon(1e-12));
  for (std::size_t i = 0; i < g_plain.recog.size(); ++i)
    CHECK(g_plain.recog[i] == doctest::Approx(g_id.recog[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < g_plain.embed.size(); ++i)
    CHECK(g_plain.embed[i] == doctest::Approx(g_id.embed[i]).epsilon(1e-12));
}

TEST_CASE("analytic gradient agrees with finite differences of the independent naive loss") {
  Rng rng(555);
  for (int trial = 0; trial < 6; ++trial) {
    const int s = 4, k = 5, h = 6;
    HeadModel m = HeadModel::init(s, k, h, rng.next_u64());
    const int subj = static_cast<int>(rng.below(s));
    const int obj = static_cast<int>(rng.below(s));
    const int label = static_cast<int>(rng.below(k));
    std::optional<TransitionMatrix> t;
    std::vector<double> t_rows;
    const bool with_t = trial % 2 == 1;
    if (with_t) {
      t = random_transition(k, rng);
      t_rows.assign(t->values().begin(), t->values().end());
    }
    detail::HeadGradients g;
    g.resize_like(m, false);
    const double loss = detail::accumulate_sample_gradient(
        m, subj, obj, label, with_t ? t->values().data() : nullptr, Orientation::Rows, false, 1.0,
        g);
    CHECK(loss ==
          doctest::Approx(oracle::naive_loss(m, subj, obj, label, with_t ? &t_rows : nullptr))
              .epsilon(1e-12));
    const double fd = 1e-5;
    auto probe = [&](std::vector<double>& param, std::size_t idx) {
      const double saved = param[idx];
      param[idx] = saved + fd;
      const double up = oracle::naive_loss(m, subj, obj, label, with_t ? &t_rows : nullptr);
      param[idx] = saved - fd;
      const double down = oracle::naive_loss(m, subj, obj, label, with_t ? &t_rows : nullptr);
      param[idx] = saved;
      return (up - down) / (2 * fd);
    };
    for (std::size_t i = 0; i < m.recog.size(); i += 7)
      CHECK(g.recog[i] == doctest::Approx(probe(m.recog, i)).epsilon(1e-5));
    for (std::size_t i = 0; i < m.embed.size(); i += 13)
      CHECK(g.embed[i] == doctest::Approx(probe(m.embed, i)).epsilon(1e-5));
    for (std::size_t i = 0; i < m.bias.size(); ++i)
      CHECK(g.bias[i] == doctest::Approx(probe(m.bias, i)).epsilon(1e-5));
  }
}

TEST_CASE("gradients are correct in the transposed orientation too") {
  Rng rng(777);
  for (int trial = 0; trial < 4; ++trial) {
    const int s = 4, k = 5, h = 6;
    HeadModel m = HeadModel::init(s, k, h, rng.next_u64());
    const int subj = static_cast<int>(rng.below(s));
    const int obj = static_cast<int>(rng.below(s));
    const int label = static_cast<int>(rng.below(k));
    const TransitionMatrix t = random_transition(k, rng);
    std::vector<double> t_rows(t.values().begin(), t.values().end());

    const Triplet sample{0, subj, obj, label};
    CHECK(grad_check(m, sample, t, 1e-4, Orientation::Cols) < 1e-4);

    detail::HeadGradients g;
    g.resize_like(m, false);
    const double loss = detail::accumulate_sample_gradient(
        m, subj, obj, label, t.values().data(), Orientation::Cols, false, 1.0, g);
    CHECK(loss == doctest::Approx(oracle::naive_loss(m, subj, obj, label, &t_rows, true))
                      .epsilon(1e-12));
  }
}

TEST_CASE("trainable transition gradient matches finite differences of the naive loss") {
  Rng rng(888);
  for (Orientation orientation : {Orientation::Rows, Orientation::Cols}) {
    const int s = 4, k = 4, h = 5;
    const HeadModel m = HeadModel::init(s, k, h, rng.next_u64());
    const int subj = static_cast<int>(rng.below(s));
    const int obj = static_cast<int>(rng.below(s));
    const int label = static_cast<int>(rng.below(k));
    std::vector<double> t_rows(static_cast<std::size_t>(k) * static_cast<std::size_t>(k));
    for (double& v : t_rows) v = rng.unit() + 0.05;

    detail::HeadGradients g;
    g.resize_like(m, true);
    (void)detail::accumulate_sample_gradient(m, subj, obj, label, t_rows.data(), orientation,
                                             true, 1.0, g);
    const bool transposed = orientation == Orientation::Cols;
    const double fd = 1e-5;
    for (std::size_t i = 0; i < t_rows.size(); ++i) {
      const double saved = t_rows[i];
      t_rows[i] = saved + fd;
      const double up = oracle::naive_loss(m, subj, obj, label, &t_rows, transposed);
      t_rows[i] = saved - fd;
      const double down = oracle::naive_loss(m, subj, obj, label, &t_rows, transposed);
      t_rows[i] = saved;
      CHECK(g.transition[i] == doctest::Approx((up - down) / (2 * fd)).epsilon(1e-5));
    }
  }
}

TEST_CASE("training memorizes a single sample") {
  const Dataset ds = one_sample_dataset();
  const HeadModel m = HeadModel::init(2, 3, 8, 5);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 1;
  cfg.step_size = 0.5;
  cfg.momentum = 0.0;
  cfg.seed = 1;
  const TrainResult r = train(m, ds, cfg);
  CHECK(r.loss_history.size() == 200);
  CHECK(r.loss_history.back() < 0.01);
  CHECK(r.loss_history.front() <= std::log(3.0) + 0.1);
}

TEST_CASE("training is deterministic per seed") {
  SynthConfig c;
  c.roots = 1;
  c.children_per_root = 2;
  c.solo_roots = 1;
  c.object_classes = 8;
  c.train_images = 60;
  c.val_images = 0;
  c.test_images = 10;
  c.triplets_per_image = 6;
  c.zipf_exponent = 1.0;
  c.relabel_prob = 0.3;
  const auto bundle = generate_synthetic(c, 6);
  const auto train_ds = bundle.train();
  const HeadModel m = HeadModel::init(8, 4, 10, 3);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.step_size = 0.2;
  cfg.momentum = 0.9;
  cfg.seed = 12;
  const TrainResult a = train(m, train_ds, cfg);
  const TrainResult b = train(m, train_ds, cfg);
  CHECK(a.model.embed == b.model.embed);
  CHECK(a.model.recog == b.model.recog);
  CHECK(a.model.bias == b.model.bias);
  CHECK(a.loss_history == b.loss_history);
  cfg.seed = 13;
  const TrainResult other = train(m, train_ds, cfg);
  CHECK(other.loss_history != a.loss_history);
}

TEST_CASE("frozen contracts: embedding and transition stay bit-identical") {
  const Dataset ds = one_sample_dataset();
  HeadModel m = HeadModel::init(2, 3, 8, 5);
  TrainConfig warm;
  warm.epochs = 3;
  warm.batch_size = 1;
  warm.step_size = 0.1;
  warm.seed = 2;
  const HeadModel stage1 = train(m, ds, warm).model;

  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 1;
  cfg.step_size = 0.3;
  cfg.seed = 3;
  cfg.freeze_embedding = true;
  Rng rng(77);
  cfg.transition = random_transition(3, rng);
  const std::uint64_t t_before = cfg.transition->checksum();
  const std::uint64_t e_before = stage1.embed_checksum();
  const TrainResult r = train(stage1, ds, cfg);
  CHECK(r.model.embed_checksum() == e_before);
  CHECK(r.model.embed == stage1.embed);
  CHECK(cfg.transition->checksum() == t_before);
  CHECK(r.model.recog != stage1.recog);  // the recognition layer did move
}

TEST_CASE("training with a trainable transition returns the learned matrix") {
  const Dataset ds = one_sample_dataset();
  const HeadModel m = HeadModel::init(2, 3, 8, 5);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 1;
  cfg.step_size = 0.3;
  cfg.seed = 4;
  std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  cfg.trainable_transition = eye;
  const TrainResult r = train(m, ds, cfg);
  REQUIRE(r.learned_transition.has_value());
  CHECK(*r.learned_transition != eye);

  SUBCASE("fixed and trainable transitions are mutually exclusive") {
    TrainConfig bad = cfg;
    bad.transition = TransitionMatrix::identity(3);
    CHECK_THROWS_AS((void)train(m, ds, bad), ConfigError);
  }
}

TEST_CASE("class weights bias training toward the upweighted class") {
  // two pairs with identical inputs impossible here; use two distinct pairs
  // and a deliberately conflicting one
  const ObjectVocab objects = ObjectVocab::from_names({"a", "b"});
  const PredicateVocab preds = PredicateVocab::from_names({"p0", "p1"});
  std::vector<Triplet> ts;
  for (int i = 0; i < 8; ++i) ts.push_back({i, 0, 1, 0});
  ts.push_back({8, 0, 1, 1});
  const Dataset ds(objects, preds, std::move(ts), "weighted");
  const HeadModel m = HeadModel::init(2, 2, 6, 1);
  TrainConfig cfg;
  cfg.epochs = 80;
  cfg.batch_size = 9;
  cfg.step_size = 0.5;
  cfg.seed = 5;
  const TrainResult plain = train(m, ds, cfg);
  cfg.class_weights = {1.0, 20.0};
  const TrainResult weighted = train(m, ds, cfg);
  const HeadScorer sp(plain.model);
  const HeadScorer sw(weighted.model);
  CHECK(sp.predict(0, 1) == 0);   // majority label wins unweighted
  CHECK(sw.predict(0, 1) == 1);   // heavy weight flips the prediction
}

TEST_CASE("training errors") {
  const Dataset empty(ObjectVocab::from_names({"a"}), PredicateVocab::from_names({"p", "q"}), {},
                      "empty");
  const HeadModel m = HeadModel::init(1, 2, 2, 1);
  TrainConfig cfg;
  CHECK_THROWS_AS((void)train(m, empty, cfg), EmptyDataset);
  const Dataset ds = one_sample_dataset();
  HeadModel m2 = HeadModel::init(2, 3, 4, 1);
  // two +inf logits make the stabilized softmax produce inf - inf = NaN
  m2.bias[0] = std::numeric_limits<double>::infinity();
  m2.bias[1] = std::numeric_limits<double>::infinity();
  TrainConfig diverge;
  diverge.epochs = 1;
  diverge.batch_size = 1;
  diverge.step_size = 0.1;
  diverge.seed = 1;
  try {
    (void)train(m2, ds, diverge);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(e.epoch == 0);
    CHECK(e.batch == 0);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  testutil::TempDir tmp("head_io");
  const HeadModel m = HeadModel::init(7, 4, 5, 123);
  m.save(tmp.path("ckpt.json"));
  const HeadModel back = HeadModel::load(tmp.path("ckpt.json"));
  CHECK(back.embed == m.embed);
  CHECK(back.recog == m.recog);
  CHECK(back.bias == m.bias);
  CHECK(back.init_seed == m.init_seed);
}

TEST_CASE("head training tracks the frequency model on clean synthetic data") {
  // rho = 0: per-pair labels are a pure function of the pair, so the head can
  // represent the count argmax given enough capacity.
  SynthConfig c;
  c.roots = 2;
  c.children_per_root = 1;
  c.solo_roots = 2;
  c.object_classes = 8;  // 56 templates
  c.train_images = 250;
  c.val_images = 0;
  c.test_images = 20;
  c.triplets_per_image = 8;
  c.zipf_exponent = 1.0;
  c.relabel_prob = 0.0;
  const auto bundle = generate_synthetic(c, 31);
  const auto train_ds = bundle.train();
  const FreqModel freq = FreqModel::fit(train_ds, 1.0);
  const HeadModel init = HeadModel::init(c.object_classes, c.predicate_count(), 128, 9);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 32;
  cfg.step_size = 0.25;
  cfg.momentum = 0.9;
  cfg.seed = 10;
  const TrainResult r = train(init, train_ds, cfg);
  const HeadScorer head(r.model);
  std::int64_t head_hits = 0, freq_hits = 0;
  for (const Triplet& t : train_ds.triplets()) {
    if (head.predict(t.subj, t.obj) == t.pred) ++head_hits;
    if (freq.predict(t.subj, t.obj) == t.pred) ++freq_hits;
  }
  const double head_acc = static_cast<double>(head_hits) / static_cast<double>(train_ds.size());
  const double freq_acc = static_cast<double>(freq_hits) / static_cast<double>(train_ds.size());
  CHECK(head_acc >= freq_acc - 0.01);
}

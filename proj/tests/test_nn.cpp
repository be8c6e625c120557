#include <doctest.h>

#include <cmath>
#include <vector>

#include "vx/nn.hpp"

using vx::Tensor;

namespace {

// Plain-loop re-implementation of multi-head attention, used as an
// independent oracle against the module (no Tensor ops involved).
std::vector<double> naive_attention(const std::vector<double>& xq, int64_t m,
                                    const std::vector<double>& xkv, int64_t n, int64_t d,
                                    int64_t heads, const vx::MultiHeadAttention& mha) {
  auto apply_linear = [d](const std::vector<double>& x, int64_t rows, const vx::Linear& lin) {
    std::vector<double> y(rows * d, 0.0);
    const auto& w = lin.w.data();
    const auto& b = lin.b.data();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t o = 0; o < d; ++o) {
        double s = b[o];
        for (int64_t i = 0; i < d; ++i) s += x[r * d + i] * w[i * d + o];
        y[r * d + o] = s;
      }
    return y;
  };
  auto q = apply_linear(xq, m, mha.wq);
  auto k = apply_linear(xkv, n, mha.wk);
  auto v = apply_linear(xkv, n, mha.wv);
  const int64_t hd = d / heads;
  std::vector<double> mix(m * d, 0.0);
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t r = 0; r < m; ++r) {
      std::vector<double> score(n);
      double mx = -1e300;
      for (int64_t c = 0; c < n; ++c) {
        double s = 0;
        for (int64_t i = 0; i < hd; ++i) s += q[r * d + h * hd + i] * k[c * d + h * hd + i];
        score[c] = s / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, score[c]);
      }
      double z = 0;
      for (int64_t c = 0; c < n; ++c) {
        score[c] = std::exp(score[c] - mx);
        z += score[c];
      }
      for (int64_t c = 0; c < n; ++c) score[c] /= z;
      for (int64_t i = 0; i < hd; ++i) {
        double s = 0;
        for (int64_t c = 0; c < n; ++c) s += score[c] * v[c * d + h * hd + i];
        mix[r * d + h * hd + i] = s;
      }
    }
  }
  return apply_linear(mix, m, mha.wo);
}

}  // namespace

TEST_CASE("linear layer computes x*w + b") {
  vx::Rng rng(1);
  vx::Linear lin(3, 2, rng);
  auto x = Tensor::from_vector({1, 3}, {1, 2, 3});
  auto y = lin.forward(x);
  const auto& w = lin.w.data();
  for (int o = 0; o < 2; ++o) {
    double expect = lin.b.data()[o];
    for (int i = 0; i < 3; ++i) expect += x.data()[i] * w[i * 2 + o];
    CHECK(y.data()[o] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("attention with a single kv token returns it for every query") {
  vx::Rng rng(2);
  vx::AttentionConfig cfg{.model_dim = 8, .num_heads = 2};
  vx::MultiHeadAttention mha(cfg, rng);
  auto xq = Tensor::randn({4, 8}, rng);
  auto kv = Tensor::randn({1, 8}, rng);
  auto y = mha.forward(xq, kv);
  REQUIRE(y.shape() == vx::Dims{4, 8});
  for (int r = 1; r < 4; ++r)
    for (int c = 0; c < 8; ++c)
      CHECK(y.data()[r * 8 + c] == doctest::Approx(y.data()[c]).epsilon(1e-12));
}

TEST_CASE("attention with identical keys ignores the queries") {
  vx::Rng rng(3);
  vx::AttentionConfig cfg{.model_dim = 6, .num_heads = 1};
  vx::MultiHeadAttention mha(cfg, rng);
  auto one_row = Tensor::randn({1, 6}, rng);
  std::vector<double> rep;
  for (int i = 0; i < 3; ++i) rep.insert(rep.end(), one_row.data().begin(), one_row.data().end());
  auto kv = Tensor::from_vector({3, 6}, rep);
  auto xq = Tensor::randn({5, 6}, rng, 3.0);
  auto y = mha.forward(xq, kv);
  for (int r = 1; r < 5; ++r)
    for (int c = 0; c < 6; ++c)
      CHECK(y.data()[r * 6 + c] == doctest::Approx(y.data()[c]).epsilon(1e-10));
}

TEST_CASE("attention matches an independent dense re-implementation") {
  vx::Rng rng(5);
  for (int64_t heads : {1, 2}) {
    vx::AttentionConfig cfg{.model_dim = 6, .num_heads = heads};
    vx::MultiHeadAttention mha(cfg, rng);
    auto xq = Tensor::randn({2, 6}, rng);
    auto kv = Tensor::randn({3, 6}, rng);
    auto y = mha.forward(xq, kv);
    auto oracle = naive_attention(xq.data(), 2, kv.data(), 3, 6, heads, mha);
    REQUIRE(oracle.size() == y.data().size());
    for (size_t i = 0; i < oracle.size(); ++i)
      CHECK(std::abs(y.data()[i] - oracle[i]) < 1e-10);
  }
}

TEST_CASE("attention weights are a convex combination when probed with one-hot values") {
  vx::Rng rng(7);
  vx::AttentionConfig cfg{.model_dim = 6, .num_heads = 1};
  vx::MultiHeadAttention mha(cfg, rng);
  // identity value/output projections expose the raw attention probabilities
  std::vector<double> eye(36, 0.0);
  for (int i = 0; i < 6; ++i) eye[i * 6 + i] = 1.0;
  mha.wv.w.leaf_data() = eye;
  std::fill(mha.wv.b.leaf_data().begin(), mha.wv.b.leaf_data().end(), 0.0);
  mha.wo.w.leaf_data() = eye;
  std::fill(mha.wo.b.leaf_data().begin(), mha.wo.b.leaf_data().end(), 0.0);
  auto kv = Tensor::from_vector({6, 6}, eye);  // one-hot value basis
  auto xq = Tensor::randn({4, 6}, rng, 2.0);
  auto y = mha.forward(xq, kv);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 6; ++c) {
      CHECK(y.data()[r * 6 + c] >= 0.0);
      s += y.data()[r * 6 + c];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("attention validates anchors and config") {
  vx::Rng rng(8);
  vx::AttentionConfig bad{.model_dim = 10, .num_heads = 3};
  CHECK_THROWS_AS(vx::MultiHeadAttention(bad, rng), vx::ShapeError);
  vx::AttentionConfig bad_rope{.model_dim = 16, .num_heads = 2, .use_rope = true};  // head_dim 8
  CHECK_THROWS_AS(vx::MultiHeadAttention(bad_rope, rng), vx::ShapeError);

  vx::AttentionConfig cfg{.model_dim = 12, .num_heads = 2, .use_rope = true};  // head_dim 6
  vx::MultiHeadAttention mha(cfg, rng);
  auto x = Tensor::randn({2, 12}, rng);
  vx::Coords anchors = {{0, 0, 0}, {0.5, 0.5, 0.5}};
  CHECK_NOTHROW(mha.forward(x, x, &anchors, &anchors));
  vx::Coords wrong = {{0, 0, 0}};
  CHECK_THROWS_AS(mha.forward(x, x, &wrong, &anchors), vx::ShapeError);
  CHECK_THROWS_AS(mha.forward(x, x, &anchors, nullptr), vx::ShapeError);

  vx::AttentionConfig norope{.model_dim = 12, .num_heads = 2};
  vx::MultiHeadAttention plain(norope, rng);
  CHECK_THROWS_AS(plain.forward(x, x, &anchors, &anchors), vx::ShapeError);
}

TEST_CASE("rotary anchors change attention output") {
  vx::Rng rng(9);
  vx::AttentionConfig cfg{.model_dim = 12, .num_heads = 2, .use_rope = true};
  vx::MultiHeadAttention mha(cfg, rng);
  auto x = Tensor::randn({3, 12}, rng);
  vx::Coords at_origin(3, {0, 0, 0});
  vx::Coords spread = {{-0.5, 0.25, 0.75}, {0.5, -0.25, 0.125}, {0.0, 0.9, -0.9}};
  auto y0 = mha.forward(x, x, &at_origin, &at_origin);
  auto y1 = mha.forward(x, x, &spread, &spread);
  double diff = 0;
  for (size_t i = 0; i < y0.data().size(); ++i) diff = std::max(diff, std::abs(y0.data()[i] - y1.data()[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("self-attention block gradient matches finite differences") {
  vx::Rng rng(10);
  vx::AttentionConfig cfg{.model_dim = 6, .num_heads = 1};
  vx::SelfAttentionBlock block(cfg, rng);
  auto x = Tensor::randn({3, 6}, rng, 0.5, true);
  auto forward = [&]() {
    auto y = block.forward(x);
    return vx::mean(vx::mul(y, y));
  };
  forward().backward();
  auto analytic = x.grad();
  auto& d = x.leaf_data();
  const double h = 1e-5;
  for (size_t i = 0; i < d.size(); i += 5) {  // sampled coordinates
    const double keep = d[i];
    d[i] = keep + h;
    const double fp = forward().item();
    d[i] = keep - h;
    const double fm = forward().item();
    d[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    CHECK(std::abs(fd - analytic[i]) <= 1e-4 * std::max(std::abs(fd), std::abs(analytic[i])) + 1e-7);
  }
}

TEST_CASE("modulated block with zero-initialized modulation is the identity") {
  vx::Rng rng(11);
  vx::AttentionConfig cfg{.model_dim = 12, .num_heads = 2};
  vx::ModulatedBlock block(cfg, 16, rng);
  auto x = Tensor::randn({5, 12}, rng);
  auto cond = Tensor::randn({1, 16}, rng);
  auto y = block.forward(x, cond, nullptr);
  for (size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("embedding lookup routes gradients to the selected row only") {
  vx::Rng rng(12);
  vx::Embedding emb(4, 3, rng);
  auto y = emb.forward(2);
  REQUIRE(y.shape() == vx::Dims{1, 3});
  for (int c = 0; c < 3; ++c) CHECK(y.data()[c] == emb.weight.data()[2 * 3 + c]);
  vx::sum(y).backward();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c)
      CHECK(emb.weight.grad()[r * 3 + c] == (r == 2 ? 1.0 : 0.0));
  CHECK_THROWS_AS(emb.forward(4), vx::ShapeError);
}

TEST_CASE("sinusoidal embedding basics") {
  auto e0 = vx::sinusoidal_embedding(0.0, 16);
  REQUIRE(e0.shape() == vx::Dims{1, 16});
  for (int i = 0; i < 8; ++i) {
    CHECK(e0.data()[i] == doctest::Approx(1.0));      // cos(0)
    CHECK(e0.data()[8 + i] == doctest::Approx(0.0));  // sin(0)
  }
  auto ea = vx::sinusoidal_embedding(0.3, 16);
  auto eb = vx::sinusoidal_embedding(0.7, 16);
  double diff = 0;
  for (int i = 0; i < 16; ++i) diff += std::abs(ea.data()[i] - eb.data()[i]);
  CHECK(diff > 0.1);
}

TEST_CASE("positional featurization layout") {
  vx::Coords pts = {{0.0, 0.5, -1.0}, {0.25, 0.25, 0.25}};
  auto f = vx::fourier_features(pts, 8);
  REQUIRE(f.shape() == vx::Dims{2, 51});
  CHECK(f.data()[0] == 0.0);
  CHECK(f.data()[1] == 0.5);
  CHECK(f.data()[2] == -1.0);
  // band 0 of x=0: sin(pi*0)=0, cos(pi*0)=1
  CHECK(f.data()[3] == doctest::Approx(0.0));
  CHECK(f.data()[4] == doctest::Approx(1.0));
  for (double v : f.data()) CHECK(std::abs(v) <= 1.0 + 1e-12);
}

TEST_CASE("optimizer leaves parameters alone under zero grad and zero decay") {
  vx::Rng rng(13);
  auto p = Tensor::randn({4}, rng, 1.0, true);
  const auto before = p.data();
  vx::AdamW opt({{"p", p}}, {});
  opt.zero_grad();
  opt.step();
  CHECK(p.data() == before);
}

TEST_CASE("optimizer decay-only arithmetic") {
  auto p = Tensor::from_vector({1}, {1.0}, true);
  vx::AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;
  vx::AdamW opt({{"p", p}}, cfg);
  opt.zero_grad();
  opt.step();
  CHECK(p.data()[0] == doctest::Approx(0.999).epsilon(1e-12));
}

TEST_CASE("optimizer drives a quadratic to its minimum") {
  auto x = Tensor::from_vector({1}, {0.0}, true);
  vx::AdamWConfig cfg;
  cfg.lr = 0.1;
  vx::AdamW opt({{"x", x}}, cfg);
  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) {
    auto err = vx::add_scalar(x, -3.0);
    auto loss = vx::sum(vx::mul(err, err));
    losses.push_back(loss.item());
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  // far from the optimum the descent is strict; at the end we are inside 0.05
  for (int step = 1; step < 20; ++step) CHECK(losses[step] < losses[step - 1]);
  CHECK(std::abs(x.data()[0] - 3.0) < 0.05);
  CHECK(losses.back() < 0.01 * losses.front());
}

TEST_CASE("optimizer skips parameters with non-finite gradients and logs it") {
  // overflow arises only in backward: forward values stay finite
  auto a = Tensor::from_vector({1}, {1e-200}, true);
  auto b = Tensor::from_vector({1}, {1e200});
  auto c = Tensor::from_vector({1}, {1e200});
  auto d = Tensor::from_vector({1}, {1.0}, true);
  // a*b = 1, (a*b)*c = 1e200: all forward values finite
  auto loss = vx::sum(vx::add(vx::mul(vx::mul(a, b), c), vx::mul(d, d)));
  loss.backward();
  CHECK(!std::isfinite(a.grad()[0]));  // d/da = b*c overflows
  CHECK(d.grad()[0] == doctest::Approx(2.0));

  const double a0 = a.data()[0], d0 = d.data()[0];
  vx::AdamWConfig cfg;
  cfg.lr = 0.1;
  vx::AdamW opt({{"a", a}, {"d", d}}, cfg);
  opt.step();
  CHECK(a.data()[0] == a0);  // skipped
  CHECK(d.data()[0] != d0);  // updated
  CHECK(opt.skipped_updates() == 1);
  REQUIRE(opt.skip_log().size() == 1);
  CHECK(opt.skip_log()[0].find("a") != std::string::npos);
}

TEST_CASE("optimizer moments support exact resume") {
  vx::Rng rng(14);
  auto make_params = [&](uint64_t seed) {
    vx::Rng r(seed);
    return Tensor::randn({3, 3}, r, 1.0, true);
  };
  auto data = Tensor::randn({3, 3}, rng);

  auto run_steps = [&](Tensor& w, vx::AdamW& opt, int n) {
    for (int i = 0; i < n; ++i) {
      auto err = vx::sub(vx::matmul(w, w), data);
      auto loss = vx::mean(vx::mul(err, err));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  };

  vx::AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.01;

  auto w1 = make_params(99);
  vx::AdamW opt1({{"w", w1}}, cfg);
  run_steps(w1, opt1, 5);

  auto w2 = make_params(99);
  vx::AdamW opt2({{"w", w2}}, cfg);
  run_steps(w2, opt2, 3);
  auto m = opt2.moments_m();
  auto v = opt2.moments_v();
  auto w3 = Tensor::from_vector({3, 3}, w2.data(), true);
  vx::AdamW opt3({{"w", w3}}, cfg);
  opt3.restore_state(opt2.step_count(), m, v);
  run_steps(w3, opt3, 2);

  CHECK(w3.data() == w1.data());  // bitwise: resume is exact
}

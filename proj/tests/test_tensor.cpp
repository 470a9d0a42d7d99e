#include <doctest.h>

#include <cmath>
#include <random>

#include "barnet/gradcheck.hpp"
#include "barnet/ops.hpp"

using namespace barnet;

namespace {

// Direct seven-loop convolution used as the reference for the im2col path.
Dense<double> conv_reference(const Dense<double>& x, const Dense<double>& w, Index stride, Index pad) {
  const Index c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const Index o = w.dim(0), k = w.dim(2);
  const Index oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Dense<double> out({o, oh, ow});
  for (Index oc = 0; oc < o; ++oc)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        for (Index ic = 0; ic < c; ++ic)
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
              const Index iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += x.at(ic, iy, ix) * w.data[((oc * c + ic) * k + ky) * k + kx];
            }
        out.at(oc, y, xx) = acc;
      }
  return out;
}

double max_abs_diff(const Dense<double>& a, const Dense<double>& b) {
  REQUIRE(a.shape == b.shape);
  return (a.data - b.data).abs().maxCoeff();
}

}  // namespace

TEST_CASE("conv2d matches the direct loop for every stride and padding") {
  std::mt19937_64 rng(3);
  for (Index stride : {1, 2})
    for (Index pad : {0, 1, 2})
      for (Index k : {1, 3, 5}) {
        if (k > 5 + 2 * pad) continue;
        const Dense<double> x = random_dense({3, 7, 6}, rng);
        const Dense<double> w = random_dense({4, 3, k, k}, rng);
        const Tensor<double> y = conv2d(Tensor<double>(x), Tensor<double>(w), stride, pad);
        CHECK(max_abs_diff(y.value(), conv_reference(x, w, stride, pad)) < 1e-12);
      }
}

TEST_CASE("conv2d rejects even or oversized kernels") {
  const auto x = Tensor<double>::zeros({2, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor<double>::zeros({1, 2, 2, 2})), DimensionError);
  CHECK_THROWS_AS(conv2d(x, Tensor<double>::zeros({1, 2, 7, 7})), DimensionError);
  CHECK_THROWS_AS(conv2d(x, Tensor<double>::zeros({1, 3, 3, 3})), DimensionError);
}

TEST_CASE("matmul and transpose agree with index loops") {
  std::mt19937_64 rng(5);
  const Dense<double> a = random_dense({3, 4}, rng), b = random_dense({4, 2}, rng);
  const auto c = matmul(Tensor<double>(a), Tensor<double>(b));
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (Index k = 0; k < 4; ++k) acc += a.data[i * 4 + k] * b.data[k * 2 + j];
      CHECK(c.value().data[i * 2 + j] == doctest::Approx(acc).epsilon(1e-14));
    }
  const auto t = transpose(Tensor<double>(a));
  CHECK(t.shape() == Shape{4, 3});
  CHECK(t.value().data[1 * 3 + 2] == a.data[2 * 4 + 1]);
  CHECK_THROWS_AS(matmul(Tensor<double>(a), Tensor<double>(a)), DimensionError);
}

TEST_CASE("global average pooling spreads the gradient evenly") {
  Tensor<double> x(Dense<double>::constant({2, 3, 4}, 1.0), true);
  sum(global_avg_pool(x)).backward();
  for (Index i = 0; i < x.numel(); ++i) CHECK(x.grad().data[i] == doctest::Approx(1.0 / 12.0));
}

TEST_CASE("upsample replicates blocks and sums their gradients") {
  Tensor<double> x(Dense<double>::from({1, 2, 2}, {1, 2, 3, 4}), true);
  const auto y = upsample(x, 2);
  CHECK(y.shape() == Shape{1, 4, 4});
  CHECK(y.value().at(0, 0, 1) == 1.0);
  CHECK(y.value().at(0, 3, 3) == 4.0);
  Dense<double> w({1, 4, 4});
  for (Index i = 0; i < 16; ++i) w.data[i] = static_cast<double>(i);
  sum(mul(y, Tensor<double>(w))).backward();
  // Block (0,0) covers flat indices 0,1,4,5.
  CHECK(x.grad().data[0] == doctest::Approx(0 + 1 + 4 + 5));
  CHECK(x.grad().data[3] == doctest::Approx(10 + 11 + 14 + 15));
  CHECK_THROWS_AS(upsample(x, 3), ConfigError);
}

TEST_CASE("concat and slice route gradients to the right channels") {
  Tensor<double> a(Dense<double>::constant({1, 2, 2}, 1.0), true);
  Tensor<double> b(Dense<double>::constant({2, 2, 2}, 2.0), true);
  const auto c = concat_channels<double>({a, b});
  CHECK(c.shape() == Shape{3, 2, 2});
  sum(scale(slice_channels(c, 1, 1), 3.0)).backward();
  CHECK(a.grad().data.abs().sum() == 0.0);
  CHECK(b.grad().data.head(4).sum() == doctest::Approx(12.0));
  CHECK(b.grad().data.tail(4).sum() == 0.0);
  CHECK_THROWS_AS(slice_channels(c, 2, 2), DimensionError);
}

TEST_CASE("softmax and log-softmax over channels") {
  std::mt19937_64 rng(9);
  const Tensor<double> z(random_dense({4, 3, 3}, rng, -5.0, 5.0));
  const auto p = softmax_channels(z);
  const auto lp = log_softmax_channels(z);
  auto pm = p.value().as_matrix(4, 9);
  for (Index i = 0; i < 9; ++i) CHECK(pm.col(i).sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK((p.value().data.log() - lp.value().data).abs().maxCoeff() < 1e-12);
  // Large logits must not overflow.
  const auto big = softmax_channels(Tensor<double>(Dense<double>::from({2, 1, 1}, {1000.0, 0.0})));
  CHECK(big.value().data[0] == doctest::Approx(1.0));
}

TEST_CASE("signed square root uses a zero subgradient at the origin") {
  Tensor<double> x(Dense<double>::from({3}, {-4.0, 0.0, 9.0}), true);
  const auto y = signed_sqrt(x);
  CHECK(y.value().data[0] == doctest::Approx(-2.0));
  CHECK(y.value().data[1] == 0.0);
  CHECK(y.value().data[2] == doctest::Approx(3.0));
  sum(y).backward();
  CHECK(x.grad().data[1] == 0.0);
  CHECK(x.grad().data[2] == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("l2 normalization and its epsilon guard") {
  std::mt19937_64 rng(11);
  const auto y = l2_normalize(Tensor<double>(random_dense({5, 5}, rng)));
  CHECK(std::sqrt(y.value().data.square().sum()) == doctest::Approx(1.0).epsilon(1e-14));
  const auto z = l2_normalize(Tensor<double>(Dense<double>({2, 2})));
  CHECK(z.value().data.abs().maxCoeff() == 0.0);
}

TEST_CASE("batch norm standardizes in training and uses running statistics at inference") {
  std::mt19937_64 rng(13);
  const Dense<double> x = random_dense({4, 5, 5}, rng, -3.0, 7.0);
  const auto gamma = Tensor<double>::constant({2}, 1.0), beta = Tensor<double>::constant({2}, 0.0);
  BatchNormStats<double> stats(2);
  // Two samples of two channels pooled together.
  const auto y = batch_norm(Tensor<double>(x), gamma, beta, stats, NormMode::training, 2);
  for (Index c = 0; c < 2; ++c) {
    double m = 0.0, v = 0.0;
    for (Index g = 0; g < 2; ++g)
      for (Index i = 0; i < 25; ++i) m += y.value().data[(g * 2 + c) * 25 + i];
    m /= 50.0;
    for (Index g = 0; g < 2; ++g)
      for (Index i = 0; i < 25; ++i) v += std::pow(y.value().data[(g * 2 + c) * 25 + i] - m, 2);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 50.0 == doctest::Approx(1.0).epsilon(1e-4));
  }
  // Running mean after one update equals momentum times the batch mean.
  double batch_mean0 = 0.0;
  for (Index g = 0; g < 2; ++g)
    for (Index i = 0; i < 25; ++i) batch_mean0 += x.data[(g * 2) * 25 + i];
  batch_mean0 /= 50.0;
  CHECK(stats.running_mean.data[0] == doctest::Approx(0.1 * batch_mean0));

  BatchNormStats<double> fixed(1);
  fixed.running_mean.data << 2.0;
  fixed.running_var.data << 4.0;
  const auto z = batch_norm(Tensor<double>(Dense<double>::constant({1, 1, 2}, 6.0)), Tensor<double>::constant({1}, 1.0),
                            Tensor<double>::constant({1}, 0.5), fixed, NormMode::inference, 1, 0.1, 0.0);
  CHECK(z.value().data[0] == doctest::Approx(2.5));
  CHECK(fixed.running_mean.data[0] == 2.0);
}

TEST_CASE("shared inputs accumulate gradients from every use") {
  Tensor<double> x(Dense<double>::from({2}, {3.0, -1.0}), true);
  sum(add(mul(x, x), x)).backward();
  CHECK(x.grad().data[0] == doctest::Approx(7.0));
  CHECK(x.grad().data[1] == doctest::Approx(-1.0));
}

TEST_CASE("no-grad mode records nothing") {
  Tensor<double> x(Dense<double>::constant({2}, 1.0), true);
  NoGradGuard guard;
  const auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("non-finite results name the producing op") {
  Tensor<double> x(Dense<double>::from({2}, {1.0, -1.0}), true);
  try {
    (void)log(x);
    FAIL("log of a negative value should throw");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("shape mismatches are dimension errors") {
  const auto a = Tensor<double>::zeros({2, 3}), b = Tensor<double>::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(reshape(a, {5}), DimensionError);
  CHECK_THROWS_AS(channel_scale(Tensor<double>::zeros({2, 2, 2}), Tensor<double>::zeros({3})), DimensionError);
}

TEST_CASE("gradcheck catches a wrong backward") {
  // Forward is x², backward claims x.
  auto broken = [](const std::vector<Tensor<double>>& in) {
    const Tensor<double>& x = in[0];
    Dense<double> out(x.shape(), x.value().data.square());
    return record<double>("broken_square", std::move(out), {x}, [](Node<double>& self) {
      if (auto* g = input_grad(self, 0)) g->data += self.grad.data * self.inputs[0]->value.data;
    });
  };
  std::mt19937_64 rng(1);
  const auto report = gradcheck("broken", broken, {random_dense({4}, rng, 0.5, 1.0)});
  CHECK_FALSE(report.passed());
  const auto good = gradcheck("square", [](const auto& in) { return mul(in[0], in[0]); }, {random_dense({4}, rng)});
  CHECK(good.passed());
}

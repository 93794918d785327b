#include "doctest.h"

#include "ssgan/nn.hpp"
#include "ssgan/optimizer.hpp"

#include <Eigen/SVD>

using namespace ssgan;

namespace {

using Mat = MatrixX<double>;

Mat random_matrix(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(rows, cols);
  fill_normal(m, 1.0, rng);
  return m;
}

ConvSpec make_spec(int out, std::array<int, 3> k, std::array<int, 3> s, std::array<int, 3> p) {
  ConvSpec spec;
  spec.out_channels = out;
  spec.kernel = k;
  spec.stride = s;
  spec.padding = p;
  return spec;
}

// Direct nested-loop convolution, no patch matrices involved.
Mat direct_conv(const Mat& x, const Geometry& g, const Mat& w, const Mat& b, const ConvSpec& s,
                Geometry& out_geo) {
  out_geo = conv_output(g, s);
  const Index cin = x.rows();
  Mat y(s.out_channels, out_geo.columns());
  for (Index n = 0; n < g.batch; ++n)
    for (Index to = 0; to < out_geo.frames; ++to)
      for (Index ho = 0; ho < out_geo.height; ++ho)
        for (Index wo = 0; wo < out_geo.width; ++wo) {
          const Index col = ((n * out_geo.frames + to) * out_geo.height + ho) * out_geo.width + wo;
          for (int co = 0; co < s.out_channels; ++co) {
            double acc = b(co, 0);
            Index k = 0;
            for (int dt = 0; dt < s.kernel[0]; ++dt)
              for (int dy = 0; dy < s.kernel[1]; ++dy)
                for (int dx = 0; dx < s.kernel[2]; ++dx)
                  for (Index c = 0; c < cin; ++c, ++k) {
                    const Index ti = to * s.stride[0] - s.padding[0] + dt;
                    const Index hi = ho * s.stride[1] - s.padding[1] + dy;
                    const Index wi = wo * s.stride[2] - s.padding[2] + dx;
                    if (ti < 0 || ti >= g.frames || hi < 0 || hi >= g.height || wi < 0 ||
                        wi >= g.width)
                      continue;
                    acc += w(co, k) * x(c, ((n * g.frames + ti) * g.height + hi) * g.width + wi);
                  }
            y(co, col) = acc;
          }
        }
  return y;
}

double top_singular_value(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()[0];
}

}  // namespace

TEST_CASE("conv output geometry") {
  const ConvSpec s = make_spec(4, {3, 4, 4}, {2, 2, 2}, {1, 1, 1});
  const Geometry out = conv_output(Geometry{2, 16, 32, 32}, s);
  CHECK(out.frames == 8);
  CHECK(out.height == 16);
  CHECK(conv_transpose_output(out, make_spec(1, {4, 4, 4}, {2, 2, 2}, {1, 1, 1})).height == 32);
  CHECK_THROWS_AS(conv_output(Geometry{1, 1, 2, 2}, make_spec(1, {1, 4, 4}, {1, 1, 1}, {0, 0, 0})),
                  ShapeError);
}

TEST_CASE("convolution matches a direct loop and col2im is the adjoint of im2col") {
  const Geometry g{2, 5, 7, 7};
  for (const ConvSpec& s : {make_spec(3, {3, 4, 4}, {2, 2, 2}, {1, 1, 1}),
                            make_spec(2, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}),
                            make_spec(4, {2, 2, 3}, {1, 2, 1}, {0, 0, 1})}) {
    Rng rng(4);
    Conv<double> conv("c", 3, s, false, rng);
    Activation<double> x{random_matrix(3, g.columns(), 1), g};
    std::vector<Parameter<double>*> params;
    conv.collect(params);
    params[1]->value = random_matrix(s.out_channels, 1, 2);
    const Activation<double> y = conv.forward(x, Mode::eval);
    Geometry og;
    const Mat ref = direct_conv(x.values, g, params[0]->value, params[1]->value, s, og);
    CHECK(y.geo.columns() == og.columns());
    CHECK((y.values - ref).cwiseAbs().maxCoeff() < 1e-12);

    Mat cols;
    im2col(x.values, g, s, og, cols);
    const Mat r = random_matrix(cols.rows(), cols.cols(), 3);
    Mat back = Mat::Zero(3, g.columns());
    col2im(r, g, s, og, back);
    CHECK(cols.cwiseProduct(r).sum() == doctest::Approx(x.values.cwiseProduct(back).sum()).epsilon(1e-12));
  }
}

TEST_CASE("transposed convolution is the adjoint of convolution's input map") {
  const ConvSpec s = make_spec(3, {4, 4, 4}, {2, 2, 2}, {1, 1, 1});
  Rng rng(5);
  ConvTranspose<double> up("u", 4, s, false, rng);
  std::vector<Parameter<double>*> params;
  up.collect(params);
  const Geometry small{2, 2, 3, 3};
  const Activation<double> z{random_matrix(4, small.columns(), 6), small};
  const Activation<double> big = up.forward(z, Mode::eval);
  // Build a conv with the same weights laid out Cout x (Cin*kvol): conv weight = W_up.
  ConvSpec down_spec = s;
  down_spec.out_channels = 4;
  Rng rng2(6);
  Conv<double> down("d", 3, down_spec, false, rng2);
  std::vector<Parameter<double>*> dp;
  down.collect(dp);
  dp[0]->value = params[0]->value;
  const Activation<double> probe{random_matrix(3, big.geo.columns(), 7), big.geo};
  const Activation<double> reduced = down.forward(probe, Mode::eval);
  REQUIRE(reduced.geo.columns() == small.columns());
  // <up(z) - bias, probe> == <z, down(probe) - bias>
  const Mat upb = big.values.colwise() - params[1]->value.col(0);
  const Mat downb = reduced.values.colwise() - dp[1]->value.col(0);
  CHECK(upb.cwiseProduct(probe.values).sum() ==
        doctest::Approx(z.values.cwiseProduct(downb).sum()).epsilon(1e-12));
}

TEST_CASE("spectral normalization") {
  SUBCASE("identity and scaled identity") {
    Rng rng(1);
    const Mat eye = Mat::Identity(6, 6);
    SpectralState<double> s = init_spectral_state(eye, rng);
    CHECK((spectral_normalize(eye, s, Mode::train) - eye).norm() < 1e-12);
    const Mat five = 5.0 * eye;
    SpectralState<double> s5 = init_spectral_state(five, rng);
    for (int i = 0; i < 50; ++i) power_iteration(five, s5);
    CHECK((spectral_normalize(five, s5, Mode::eval) - eye).norm() < 1e-9);
  }
  SUBCASE("random 16x16 after 50 iterations matches an exact decomposition") {
    Rng rng(2);
    const Mat w = random_matrix(16, 16, 8);
    SpectralState<double> s = init_spectral_state(w, rng);
    for (int i = 0; i < 50; ++i) power_iteration(w, s);
    const double exact = top_singular_value(w);
    CHECK(std::abs(spectral_sigma(w, s) - exact) / exact < 1e-4);
    CHECK(top_singular_value(spectral_normalize(w, s, Mode::eval)) == doctest::Approx(1.0).epsilon(0.02));
  }
  SUBCASE("zero matrix is floored instead of dividing by zero") {
    Rng rng(3);
    const Mat zero = Mat::Zero(4, 3);
    SpectralState<double> s = init_spectral_state(zero, rng);
    double sigma = 0.0;
    const Mat out = spectral_normalize(zero, s, Mode::train, &sigma);
    CHECK(sigma == kSpectralEpsilon);
    CHECK(out.allFinite());
    CHECK(out.norm() == 0.0);
  }
  SUBCASE("eval mode leaves the stored vectors alone") {
    Rng rng(4);
    const Mat w = random_matrix(5, 7, 9);
    SpectralState<double> s = init_spectral_state(w, rng);
    const SpectralState<double> before = s;
    (void)spectral_normalize(w, s, Mode::eval);
    CHECK(s.u == before.u);
    (void)spectral_normalize(w, s, Mode::train);
    CHECK(s.u != before.u);
  }
  SUBCASE("backward matches finite differences of W / (u^T W v)") {
    Rng rng(5);
    const Mat w = random_matrix(4, 6, 10);
    SpectralState<double> s = init_spectral_state(w, rng);
    const Mat g = random_matrix(4, 6, 11);
    auto loss = [&](const Mat& m) { return spectral_normalize(m, s, Mode::eval).cwiseProduct(g).sum(); };
    double sigma = 0.0;
    const Mat wn = spectral_normalize(w, s, Mode::eval, &sigma);
    const Mat analytic = spectral_backward(g, wn, s, sigma);
    for (Index i = 0; i < w.size(); ++i) {
      Mat plus = w, minus = w;
      plus.data()[i] += 1e-6;
      minus.data()[i] -= 1e-6;
      const double numeric = (loss(plus) - loss(minus)) / 2e-6;
      CHECK(analytic.data()[i] == doctest::Approx(numeric).epsilon(1e-6));
    }
  }
}

TEST_CASE("layer gradients agree with finite differences") {
  auto check_layer = [](auto& layer, const Activation<double>& x, const Activation<double>& gy) {
    const Mat& g = gy.values;
    std::vector<Parameter<double>*> params;
    layer.collect(params);
    auto loss = [&] { return layer.forward(x, Mode::eval).values.cwiseProduct(g).sum(); };
    (void)layer.forward(x, Mode::eval);
    for (auto* p : params) p->grad.setZero();
    const Activation<double> gx = layer.backward(gy, {true, true});
    for (auto* p : params) {
      for (Index i = 0; i < p->value.size(); i += 3) {
        const double saved = p->value.data()[i];
        p->value.data()[i] = saved + 1e-6;
        const double up = loss();
        p->value.data()[i] = saved - 1e-6;
        const double down = loss();
        p->value.data()[i] = saved;
        CHECK(p->grad.data()[i] == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
      }
    }
    Activation<double> xp = x;
    for (Index i = 0; i < x.values.size(); i += 5) {
      const double saved = xp.values.data()[i];
      xp.values.data()[i] = saved + 1e-6;
      const double up = layer.forward(xp, Mode::eval).values.cwiseProduct(g).sum();
      xp.values.data()[i] = saved - 1e-6;
      const double down = layer.forward(xp, Mode::eval).values.cwiseProduct(g).sum();
      xp.values.data()[i] = saved;
      CHECK(gx.values.data()[i] == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
    }
  };

  const Geometry g{2, 4, 6, 6};
  const Activation<double> x{random_matrix(2, g.columns(), 12), g};
  SUBCASE("spectrally normalized convolution") {
    Rng rng(6);
    Conv<double> conv("c", 2, make_spec(3, {3, 4, 4}, {2, 2, 2}, {1, 1, 1}), true, rng);
    const Geometry og = conv_output(g, conv.spec());
    check_layer(conv, x, Activation<double>{random_matrix(3, og.columns(), 13), og});
  }
  SUBCASE("transposed convolution") {
    Rng rng(7);
    ConvTranspose<double> up("u", 2, make_spec(3, {4, 4, 4}, {2, 2, 2}, {1, 1, 1}), false, rng);
    const Geometry og = conv_transpose_output(g, up.spec());
    check_layer(up, x, Activation<double>{random_matrix(3, og.columns(), 14), og});
  }
}

TEST_CASE("linear layer gradients") {
  Rng rng(8);
  Linear<double> lin("l", 5, 3, true, rng);
  const Mat x = random_matrix(4, 5, 15);
  const Mat g = random_matrix(4, 3, 16);
  std::vector<Parameter<double>*> params;
  lin.collect(params);
  (void)lin.forward(x, Mode::eval);
  for (auto* p : params) p->grad.setZero();
  const Mat gx = lin.backward(g, {true, true});
  auto loss = [&](const Mat& in) { return lin.forward(in, Mode::eval).cwiseProduct(g).sum(); };
  for (auto* p : params) {
    for (Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + 1e-6;
      const double up = loss(x);
      p->value.data()[i] = saved - 1e-6;
      const double down = loss(x);
      p->value.data()[i] = saved;
      CHECK(p->grad.data()[i] == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
    }
  }
  for (Index i = 0; i < x.size(); ++i) {
    Mat plus = x, minus = x;
    plus.data()[i] += 1e-6;
    minus.data()[i] -= 1e-6;
    CHECK(gx.data()[i] == doctest::Approx((loss(plus) - loss(minus)) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("activations") {
  Mat x(1, 4);
  x << -2.0, -0.5, 0.0, 3.0;
  Mat l = x;
  leaky_relu_inplace(l, 0.2);
  CHECK(l(0, 0) == doctest::Approx(-0.4));
  CHECK(l(0, 3) == 3.0);
  const Mat ones = Mat::Ones(1, 4);
  const Mat gl = leaky_relu_backward(ones, l, 0.2);
  CHECK(gl(0, 0) == doctest::Approx(0.2));
  CHECK(gl(0, 3) == 1.0);
  Mat r = x;
  relu_inplace(r);
  CHECK(r(0, 1) == 0.0);
  CHECK(relu_backward(ones, r)(0, 1) == 0.0);
  const Mat t = x.array().tanh().matrix();
  CHECK(tanh_backward(ones, t)(0, 3) == doctest::Approx(1.0 - std::tanh(3.0) * std::tanh(3.0)));
}

TEST_CASE("adam first step moves each weight by the learning rate") {
  Parameter<double> p("p", 2, 2);
  p.value << 1.0, -1.0, 0.5, 0.0;
  p.grad << 3.0, -0.01, 0.0, 1e3;
  std::vector<Parameter<double>*> params{&p};
  Adam<double> adam({1e-2, 0.5, 0.999, 1e-8}, params);
  const Mat before = p.value;
  adam.step(params);
  // With bias correction m_hat = g and v_hat = g^2, so the step is lr * sign(g).
  CHECK(p.value(0, 0) == doctest::Approx(before(0, 0) - 1e-2));
  CHECK(p.value(0, 1) == doctest::Approx(before(0, 1) + 1e-2).epsilon(1e-5));
  CHECK(p.value(1, 0) == before(1, 0));
  CHECK(p.value(1, 1) == doctest::Approx(before(1, 1) - 1e-2));
  CHECK(adam.steps() == 1);
  // Second step, hand-evaluated for the first entry with a new gradient.
  p.grad << 1.0, 0.0, 0.0, 0.0;
  adam.step(params);
  const double m = 0.5 * (0.5 * 3.0) + 0.5 * 1.0;
  const double v = 0.999 * (0.001 * 9.0) + 0.001 * 1.0;
  const double first = 1e-2 * 3.0 / (3.0 + 1e-8);
  const double second = 1e-2 * (m / (1 - 0.25)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(p.value(0, 0) == doctest::Approx(before(0, 0) - first - second).epsilon(1e-12));
}

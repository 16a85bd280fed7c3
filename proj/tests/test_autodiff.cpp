// Copyright 2026 The Matchmap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <functional>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "matchmap/ops.hpp"
#include "matchmap/optim.hpp"

using namespace mm;

namespace {

Tensor<double> rand_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (int64_t i = 0; i < t.numel(); ++i) t.at_flat(i) = scale * rng.normal();
  return t;
}

// Random tensor with every entry at least `margin` away from zero, so
// finite differences never straddle a relu kink.
Tensor<double> rand_tensor_off_zero(Shape s, Rng& rng, double margin = 0.05) {
  Tensor<double> t = rand_tensor(std::move(s), rng);
  for (int64_t i = 0; i < t.numel(); ++i) {
    double& v = t.at_flat(i);
    if (v >= 0 && v < margin) v += margin;
    if (v < 0 && v > -margin) v -= margin;
  }
  return t;
}

using Builder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

// Compares analytic gradients of a scalar graph against central
// differences, rebuilding the graph for every probe.
void check_gradients(const std::vector<Tensor<double>>& inputs,
                     const Builder& build, double tol = 1e-6,
                     double eps = 1e-5) {
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    std::vector<Var> vs;
    for (const auto& t : inputs) vs.push_back(g.input(t));
    Var root = build(g, vs);
    REQUIRE(g.value(root).numel() == 1);
    g.backward(root);
    for (Var v : vs) analytic.push_back(g.grad(v));
  }
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Graph<double> g;
    std::vector<Var> vs;
    for (const auto& t : xs) vs.push_back(g.input(t));
    return double(g.value(build(g, vs)).at_flat(0));
  };
  for (size_t t = 0; t < inputs.size(); ++t) {
    for (int64_t i = 0; i < inputs[t].numel(); ++i) {
      std::vector<Tensor<double>> xs = inputs;
      const double x0 = xs[t].at_flat(i);
      xs[t].at_flat(i) = x0 + eps;
      const double fp = eval(xs);
      xs[t].at_flat(i) = x0 - eps;
      const double fm = eval(xs);
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = analytic[t].at_flat(i);
      INFO("input " << t << " flat " << i << ": analytic " << an << " fd "
                    << fd);
      REQUIRE(mmtest::rel_err(an, fd, 1e-6) < tol);
    }
  }
}

// Scalarizer: sum of out * proj with a fixed projection, making the
// upstream gradient non-uniform.
Var project(Graph<double>& g, Var y, const Tensor<double>& proj) {
  return reduce_sum(g, mul(g, y, g.input(proj)));
}

}  // namespace

TEST_CASE("conv2d forward matches the nested-loop oracle") {
  Rng rng(101);
  SECTION("random 2x4x4 input, 3x2x3x3 kernels, same padding") {
    Tensor<double> x = rand_tensor({2, 4, 4}, rng);
    Tensor<double> w = rand_tensor({3, 2, 3, 3}, rng);
    Tensor<double> b = rand_tensor({3}, rng);
    Tensor<double> out = conv2d_fwd(x, w, b, 1, 1, Pad::same, Pad::same);
    Tensor<double> ref = mmtest::naive_conv2d(x, w, b, 1, 1, true, true);
    REQUIRE(out.shape() == ref.shape());
    REQUIRE(out.shape() == Shape{3, 4, 4});
    for (int64_t i = 0; i < out.numel(); ++i)
      REQUIRE(mmtest::rel_err(out.at_flat(i), ref.at_flat(i)) < 1e-6);
  }
  SECTION("strided and valid variants") {
    for (auto [sh, sw] :
         {std::pair<int64_t, int64_t>{1, 1}, {2, 2}, {2, 1}, {3, 2}}) {
      Tensor<double> x = rand_tensor({3, 7, 6}, rng);
      Tensor<double> w = rand_tensor({4, 3, 3, 3}, rng);
      Tensor<double> b = rand_tensor({4}, rng);
      Tensor<double> s_out = conv2d_fwd(x, w, b, sh, sw, Pad::same, Pad::same);
      Tensor<double> s_ref = mmtest::naive_conv2d(x, w, b, sh, sw, true, true);
      REQUIRE(s_out.shape() == s_ref.shape());
      REQUIRE(s_out.extent(1) == ceil_div(7, sh));
      REQUIRE(s_out.extent(2) == ceil_div(6, sw));
      for (int64_t i = 0; i < s_out.numel(); ++i)
        REQUIRE(mmtest::rel_err(s_out.at_flat(i), s_ref.at_flat(i)) < 1e-6);

      Tensor<double> v_out =
          conv2d_fwd(x, w, b, sh, sw, Pad::valid, Pad::valid);
      Tensor<double> v_ref =
          mmtest::naive_conv2d(x, w, b, sh, sw, false, false);
      REQUIRE(v_out.shape() == v_ref.shape());
      for (int64_t i = 0; i < v_out.numel(); ++i)
        REQUIRE(mmtest::rel_err(v_out.at_flat(i), v_ref.at_flat(i)) < 1e-6);
    }
  }
  SECTION("mixed same and valid axes") {
    Tensor<double> x = rand_tensor({2, 6, 5}, rng);
    Tensor<double> w = rand_tensor({3, 2, 3, 5}, rng);
    Tensor<double> b = rand_tensor({3}, rng);
    Tensor<double> out = conv2d_fwd(x, w, b, 1, 1, Pad::same, Pad::valid);
    Tensor<double> ref = mmtest::naive_conv2d(x, w, b, 1, 1, true, false);
    REQUIRE(out.shape() == ref.shape());
    REQUIRE(out.shape() == Shape{3, 6, 1});
    for (int64_t i = 0; i < out.numel(); ++i)
      REQUIRE(mmtest::rel_err(out.at_flat(i), ref.at_flat(i)) < 1e-6);
  }
  SECTION("identity kernel reproduces the input") {
    Tensor<double> x = rand_tensor({1, 5, 5}, rng);
    Tensor<double> w({1, 1, 1, 1});
    w.at_flat(0) = 1.0;
    Tensor<double> b({1});
    Tensor<double> out = conv2d_fwd(x, w, b, 1, 1, Pad::same, Pad::same);
    for (int64_t i = 0; i < x.numel(); ++i)
      REQUIRE(out.at_flat(i) == x.at_flat(i));
  }
  SECTION("zero input gives constant bias maps") {
    Tensor<double> x({2, 4, 4});
    Tensor<double> w = rand_tensor({3, 2, 3, 3}, rng);
    Tensor<double> b({3}, {0.5, -1.0, 2.0});
    Tensor<double> out = conv2d_fwd(x, w, b, 1, 1, Pad::same, Pad::same);
    for (int64_t co = 0; co < 3; ++co)
      for (int64_t i = 0; i < 16; ++i)
        REQUIRE(out.at_flat(co * 16 + i) == b.at_flat(co));
  }
  SECTION("batched rank-4 input agrees with per-sample rank-3") {
    Tensor<double> xb = rand_tensor({2, 3, 5, 5}, rng);
    Tensor<double> w = rand_tensor({4, 3, 3, 3}, rng);
    Tensor<double> b = rand_tensor({4}, rng);
    Tensor<double> out = conv2d_fwd(xb, w, b, 1, 1, Pad::same, Pad::same);
    REQUIRE(out.shape() == Shape{2, 4, 5, 5});
    for (int64_t bi = 0; bi < 2; ++bi) {
      Tensor<double> xi({3, 5, 5});
      for (int64_t i = 0; i < 75; ++i)
        xi.at_flat(i) = xb.at_flat(bi * 75 + i);
      Tensor<double> oi = conv2d_fwd(xi, w, b, 1, 1, Pad::same, Pad::same);
      for (int64_t i = 0; i < oi.numel(); ++i)
        REQUIRE(oi.at_flat(i) == out.at_flat(bi * oi.numel() + i));
    }
  }
  SECTION("channel mismatch errors name both shapes") {
    Tensor<double> x({2, 4, 4});
    Tensor<double> w({3, 5, 3, 3});
    Tensor<double> b({3});
    REQUIRE_THROWS_WITH(
        conv2d_fwd(x, w, b, 1, 1, Pad::same, Pad::same),
        Catch::Matchers::ContainsSubstring("[2, 4, 4]") &&
            Catch::Matchers::ContainsSubstring("[3, 5, 3, 3]"));
  }
}

TEST_CASE("maxpool geometry and ties") {
  SECTION("worked 1-d example") {
    Tensor<double> x({1, 6}, {1, 2, 3, 4, 5, 6});
    Tensor<double> out = maxpool1d_fwd(x, 3, 2, nullptr);
    REQUIRE(out.shape() == Shape{1, 3});
    REQUIRE(out.at_flat(0) == 3);
    REQUIRE(out.at_flat(1) == 5);
    REQUIRE(out.at_flat(2) == 6);
  }
  SECTION("width 1 stride 1 is the identity") {
    Rng rng(5);
    Tensor<double> x = rand_tensor({2, 7}, rng);
    Tensor<double> out = maxpool1d_fwd(x, 1, 1, nullptr);
    for (int64_t i = 0; i < x.numel(); ++i)
      REQUIRE(out.at_flat(i) == x.at_flat(i));
  }
  SECTION("2-d pooling matches direct loops") {
    Rng rng(6);
    Tensor<double> x = rand_tensor({2, 5, 7}, rng);
    Tensor<double> out = maxpool2d_fwd(x, 2, 2, nullptr);
    REQUIRE(out.shape() == Shape{2, 3, 4});
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t r = 0; r < 3; ++r)
        for (int64_t q = 0; q < 4; ++q) {
          double best = -1e300;
          for (int64_t dr = 0; dr < 2; ++dr)
            for (int64_t dq = 0; dq < 2; ++dq) {
              const int64_t rr = r * 2 + dr, qq = q * 2 + dq;
              if (rr < 5 && qq < 7) best = std::max(best, x(c, rr, qq));
            }
          REQUIRE(out(c, r, q) == best);
        }
  }
  SECTION("ties route the gradient to the first index") {
    Graph<double> g;
    Var x = g.input(Tensor<double>({1, 4}, {2, 2, 1, 2}));
    Var p = maxpool1d(g, x, 4, 4);
    REQUIRE(g.value(p).numel() == 1);
    g.backward(p);
    const Tensor<double>& gx = g.grad(x);
    REQUIRE(gx.at_flat(0) == 1.0);
    REQUIRE(gx.at_flat(1) == 0.0);
    REQUIRE(gx.at_flat(2) == 0.0);
    REQUIRE(gx.at_flat(3) == 0.0);
  }
  SECTION("bad window arguments are rejected") {
    Tensor<double> x({1, 4});
    REQUIRE_THROWS_AS(maxpool1d_fwd(x, 0, 1, nullptr), Error);
    REQUIRE_THROWS_AS(maxpool1d_fwd(x, 2, 0, nullptr), Error);
  }
}

TEST_CASE("matchmap forward matches the triple-loop oracle") {
  Rng rng(7);
  Tensor<double> img = rand_tensor({5, 3, 4}, rng);
  Tensor<double> aud = rand_tensor({5, 6}, rng);
  Tensor<double> m = matchmap_fwd(img, aud);
  REQUIRE(m.shape() == Shape{3, 4, 6});
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t c = 0; c < 4; ++c)
      for (int64_t t = 0; t < 6; ++t) {
        double s = 0;
        for (int64_t d = 0; d < 5; ++d) s += img(d, r, c) * aud(d, t);
        REQUIRE(mmtest::rel_err(m(r, c, t), s) < 1e-12);
      }
  Tensor<double> bad = rand_tensor({4, 6}, rng);
  REQUIRE_THROWS_AS(matchmap_fwd(img, bad), Error);
}

TEST_CASE("similarity reductions on the worked matchmap") {
  // M[0,0,:] = [1,2], M[0,1,:] = [3,4]
  Tensor<double> m({1, 2, 2}, {1, 2, 3, 4});
  REQUIRE(sisa_value(m) == 2.5);
  REQUIRE(misa_value(m) == 3.5);
  REQUIRE(sima_value(m) == 3.0);
}

TEST_CASE("finite differences confirm every op gradient") {
  Rng rng(2024);
  SECTION("conv2d, same padding, stride 1") {
    Tensor<double> proj = rand_tensor({3, 4, 4}, rng);
    check_gradients(
        {rand_tensor({2, 4, 4}, rng), rand_tensor({3, 2, 3, 3}, rng),
         rand_tensor({3}, rng)},
        [&](Graph<double>& g, const std::vector<Var>& v) {
          return project(g, conv2d(g, v[0], v[1], v[2], 1, Pad::same), proj);
        });
  }
  SECTION("conv2d, same padding, stride 2") {
    Tensor<double> proj = rand_tensor({3, 3, 2}, rng);
    check_gradients(
        {rand_tensor({2, 5, 4}, rng), rand_tensor({3, 2, 3, 3}, rng),
         rand_tensor({3}, rng)},
        [&](Graph<double>& g, const std::vector<Var>& v) {
          return project(g, conv2d(g, v[0], v[1], v[2], 2, Pad::same), proj);
        });
  }
  SECTION("conv2d, valid padding, batched input") {
    Tensor<double> proj = rand_tensor({2, 3, 3, 2}, rng);
    check_gradients(
        {rand_tensor({2, 2, 5, 4}, rng), rand_tensor({3, 2, 3, 3}, rng),
         rand_tensor({3}, rng)},
        [&](Graph<double>& g, const std::vector<Var>& v) {
          return project(
              g, conv2d(g, v[0], v[1], v[2], 1, 1, Pad::valid, Pad::valid),
              proj);
        });
  }
  SECTION("maxpool1d") {
    Tensor<double> proj = rand_tensor({2, 4}, rng);
    check_gradients({rand_tensor({2, 7}, rng)},
                    [&](Graph<double>& g, const std::vector<Var>& v) {
                      return project(g, maxpool1d(g, v[0], 3, 2), proj);
                    });
  }
  SECTION("maxpool2d") {
    Tensor<double> proj = rand_tensor({2, 3, 3}, rng);
    check_gradients({rand_tensor({2, 5, 6}, rng)},
                    [&](Graph<double>& g, const std::vector<Var>& v) {
                      return project(g, maxpool2d(g, v[0], 2, 2), proj);
                    });
  }
  SECTION("avgpool1d with a partial final window") {
    Tensor<double> proj = rand_tensor({2, 4}, rng);
    check_gradients({rand_tensor({2, 7}, rng)},
                    [&](Graph<double>& g, const std::vector<Var>& v) {
                      return project(g, avgpool1d(g, v[0], 3, 2), proj);
                    });
  }
  SECTION("relu") {
    Tensor<double> proj = rand_tensor({3, 5}, rng);
    check_gradients({rand_tensor_off_zero({3, 5}, rng)},
                    [&](Graph<double>& g, const std::vector<Var>& v) {
                      return project(g, relu(g, v[0]), proj);
                    });
  }
  SECTION("batchnorm, training mode") {
    Tensor<double> proj = rand_tensor({3, 2, 2, 2}, rng);
    check_gradients(
        {rand_tensor({3, 2, 2, 2}, rng), rand_tensor({2}, rng),
         rand_tensor({2}, rng)},
        [&](Graph<double>& g, const std::vector<Var>& v) {
          Tensor<double> rmean({2});
          Tensor<double> rvar = Tensor<double>::full({2}, 1.0);
          Var y = batchnorm(g, v[0], v[1], v[2], true, &rmean, &rvar);
          return project(g, y, proj);
        },
        1e-5);
  }
  SECTION("batchnorm, eval mode") {
    Tensor<double> proj = rand_tensor({2, 2, 3}, rng);
    Tensor<double> rmean({2}, {0.3, -0.2});
    Tensor<double> rvar({2}, {1.5, 0.8});
    check_gradients(
        {rand_tensor({2, 2, 3}, rng), rand_tensor({2}, rng),
         rand_tensor({2}, rng)},
        [&](Graph<double>& g, const std::vector<Var>& v) {
          Tensor<double> rm = rmean, rv = rvar;
          Var y = batchnorm(g, v[0], v[1], v[2], false, &rm, &rv);
          return project(g, y, proj);
        });
  }
  SECTION("matchmap with each similarity") {
    check_gradients({rand_tensor({5, 3, 4}, rng), rand_tensor({5, 6}, rng)},
                    [&](Graph<double>& g, const std::vector<Var>& v) {
                      return sisa(g, matchmap(g, v[0], v[1]));
                    });
    check_gradients({rand_tensor({5, 3, 4}, rng), rand_tensor({5, 6}, rng)},
                    [&](Graph<double>& g, const std::vector<Var>& v) {
                      return misa(g, matchmap(g, v[0], v[1]));
                    });
    check_gradients({rand_tensor({5, 3, 4}, rng), rand_tensor({5, 6}, rng)},
                    [&](Graph<double>& g, const std::vector<Var>& v) {
                      return sima(g, matchmap(g, v[0], v[1]));
                    });
  }
  SECTION("matmul") {
    Tensor<double> proj = rand_tensor({3, 5}, rng);
    check_gradients({rand_tensor({3, 4}, rng), rand_tensor({4, 5}, rng)},
                    [&](Graph<double>& g, const std::vector<Var>& v) {
                      return project(g, matmul(g, v[0], v[1]), proj);
                    });
  }
  SECTION("global_avgpool") {
    Tensor<double> proj = rand_tensor({3}, rng);
    check_gradients({rand_tensor({3, 4, 5}, rng)},
                    [&](Graph<double>& g, const std::vector<Var>& v) {
                      return project(g, global_avgpool(g, v[0]), proj);
                    });
  }
  SECTION("mask_time and slice_time") {
    Tensor<double> proj = rand_tensor({2, 3, 8}, rng);
    check_gradients({rand_tensor({2, 3, 8}, rng)},
                    [&](Graph<double>& g, const std::vector<Var>& v) {
                      return project(g, mask_time(g, v[0], {5, 8}), proj);
                    });
    Tensor<double> sproj = rand_tensor({3, 5}, rng);
    check_gradients({rand_tensor({2, 3, 1, 7}, rng)},
                    [&](Graph<double>& g, const std::vector<Var>& v) {
                      return project(g, slice_time(g, v[0], 1, 5), sproj);
                    });
  }
  SECTION("elementwise arithmetic and reductions") {
    check_gradients(
        {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)},
        [&](Graph<double>& g, const std::vector<Var>& v) {
          Var s = add(g, v[0], v[1]);
          Var d = sub(g, v[0], affine(g, v[1], 2.0, 0.5));
          Var p = mul(g, s, d);
          Var t = sum_vars(g, {p, s, scale(g, d, -0.75)});
          return reduce_mean(g, t);
        });
  }
  SECTION("composite network block") {
    Tensor<double> proj = rand_tensor({8}, rng);
    check_gradients(
        {rand_tensor_off_zero({2, 6, 6}, rng),
         rand_tensor({4, 2, 3, 3}, rng, 0.5), rand_tensor({4}, rng, 0.1),
         rand_tensor({8, 4, 3, 3}, rng, 0.5), rand_tensor({8}, rng, 0.1)},
        [&](Graph<double>& g, const std::vector<Var>& v) {
          Var h = relu(g, conv2d(g, v[0], v[1], v[2], 1, Pad::same));
          Var p = maxpool2d(g, h, 2, 2);
          Var o = conv2d(g, p, v[3], v[4], 1, Pad::same);
          return project(g, global_avgpool(g, o), proj);
        },
        1e-5);
  }
}

TEST_CASE("masked gradient is exactly zero past the valid length") {
  Rng rng(11);
  Graph<double> g;
  Var x = g.input(rand_tensor({2, 3, 8}, rng));
  Var y = mask_time(g, x, {5, 8});
  Var loss = reduce_sum(g, y);
  g.backward(loss);
  const Tensor<double>& gx = g.grad(x);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t t = 0; t < 8; ++t) {
      const double want = (t < 5) ? 1.0 : 0.0;
      REQUIRE(gx(0, c, t) == want);
      REQUIRE(gx(1, c, t) == 1.0);
    }
  REQUIRE_THROWS_AS(mask_time(g, x, {0, 8}), Error);
  REQUIRE_THROWS_AS(mask_time(g, x, {5}), Error);
}

TEST_CASE("backward walks the tape correctly") {
  SECTION("p squared at p=3 gives gradient 6") {
    Parameter<double> p("p", Tensor<double>({1}, {3.0}));
    Graph<double> g;
    Var pv = g.param(p);
    g.backward(mul(g, pv, pv));
    REQUIRE(p.grad.at_flat(0) == 6.0);
  }
  SECTION("parameter gradients accumulate across graphs until cleared") {
    Parameter<double> p("p", Tensor<double>({1}, {3.0}));
    for (int k = 0; k < 2; ++k) {
      Graph<double> g;
      Var pv = g.param(p);
      g.backward(mul(g, pv, pv));
    }
    REQUIRE(p.grad.at_flat(0) == 12.0);
    p.zero_grad();
    REQUIRE(p.grad.at_flat(0) == 0.0);
  }
  SECTION("param vars are memoized per parameter") {
    Parameter<double> p("p", Tensor<double>({1}, {3.0}));
    Graph<double> g;
    Var a = g.param(p);
    Var b = g.param(p);
    REQUIRE(a.id == b.id);
  }
  SECTION("non-scalar root is rejected") {
    Graph<double> g;
    Var x = g.input(Tensor<double>({2}, {1, 2}));
    REQUIRE_THROWS_AS(g.backward(x), Error);
  }
  SECTION("disconnected parameter gets exactly zero") {
    Parameter<double> p("p", Tensor<double>({1}, {3.0}));
    Parameter<double> q("q", Tensor<double>({2}, {1.0, 2.0}));
    Graph<double> g;
    Var pv = g.param(p);
    g.param(q);
    g.backward(mul(g, pv, pv));
    REQUIRE(q.grad.at_flat(0) == 0.0);
    REQUIRE(q.grad.at_flat(1) == 0.0);
  }
  SECTION("backward of a sum equals the sum of backwards, exactly") {
    Rng rng(17);
    Tensor<double> init = rand_tensor({4}, rng);
    auto loss_a = [](Graph<double>& g, Var pv) {
      return reduce_sum(g, mul(g, pv, pv));
    };
    auto loss_b = [](Graph<double>& g, Var pv) {
      return reduce_sum(g, scale(g, pv, 2.5));
    };
    Tensor<double> ga({4}), gb({4}), gsum({4});
    {
      Parameter<double> p("p", init);
      Graph<double> g;
      Var pv = g.param(p);
      g.backward(loss_a(g, pv));
      ga = p.grad;
    }
    {
      Parameter<double> p("p", init);
      Graph<double> g;
      Var pv = g.param(p);
      g.backward(loss_b(g, pv));
      gb = p.grad;
    }
    {
      Parameter<double> p("p", init);
      Graph<double> g;
      Var pv = g.param(p);
      g.backward(add(g, loss_a(g, pv), loss_b(g, pv)));
      gsum = p.grad;
    }
    for (int64_t i = 0; i < 4; ++i)
      REQUIRE(gsum.at_flat(i) == ga.at_flat(i) + gb.at_flat(i));
  }
}

TEST_CASE("batchnorm definitional properties") {
  Rng rng(23);
  const int64_t B = 4, C = 3, H = 2, W = 2;
  Tensor<double> x = rand_tensor({B, C, H, W}, rng, 2.0);
  Tensor<double> gamma = Tensor<double>::full({C}, 1.0);
  Tensor<double> beta({C});

  SECTION("training output is normalized per channel") {
    Tensor<double> rmean({C});
    Tensor<double> rvar = Tensor<double>::full({C}, 1.0);
    Tensor<double> y =
        batchnorm_fwd(x, gamma, beta, true, &rmean, &rvar, 1e-5, 0.1, nullptr);
    const int64_t m = B * H * W;
    for (int64_t c = 0; c < C; ++c) {
      double s = 0, s2 = 0;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < H * W; ++i) {
          const double v = y.at_flat((b * C + c) * H * W + i);
          s += v;
          s2 += v * v;
        }
      const double mean = s / double(m);
      const double var = s2 / double(m) - mean * mean;
      REQUIRE(std::abs(mean) < 1e-10);
      REQUIRE(std::abs(var - 1.0) < 1e-3);
    }
  }
  SECTION("gamma 0 collapses the output to beta") {
    Tensor<double> g0({C});
    Tensor<double> b0({C}, {0.5, -1.0, 2.0});
    Tensor<double> rmean({C});
    Tensor<double> rvar = Tensor<double>::full({C}, 1.0);
    Tensor<double> y =
        batchnorm_fwd(x, g0, b0, true, &rmean, &rvar, 1e-5, 0.1, nullptr);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H * W; ++i)
          REQUIRE(y.at_flat((b * C + c) * H * W + i) == b0.at_flat(c));
  }
  SECTION("running stats blend with momentum 0.1") {
    Tensor<double> rmean = Tensor<double>::full({C}, 0.7);
    Tensor<double> rvar = Tensor<double>::full({C}, 2.0);
    batchnorm_fwd(x, gamma, beta, true, &rmean, &rvar, 1e-5, 0.1, nullptr);
    const int64_t m = B * H * W;
    for (int64_t c = 0; c < C; ++c) {
      double s = 0, s2 = 0;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < H * W; ++i) {
          const double v = x.at_flat((b * C + c) * H * W + i);
          s += v;
          s2 += v * v;
        }
      const double mean = s / double(m);
      const double var = s2 / double(m) - mean * mean;
      REQUIRE(mmtest::rel_err(rmean.at_flat(c), 0.9 * 0.7 + 0.1 * mean) <
              1e-10);
      REQUIRE(mmtest::rel_err(rvar.at_flat(c), 0.9 * 2.0 + 0.1 * var) < 1e-10);
    }
  }
  SECTION("eval mode applies the running stats directly") {
    Tensor<double> rmean({C}, {0.1, -0.4, 0.9});
    Tensor<double> rvar({C}, {1.2, 0.5, 3.0});
    Tensor<double> gm({C}, {1.5, -0.5, 2.0});
    Tensor<double> bt({C}, {0.2, 0.0, -1.0});
    Tensor<double> y =
        batchnorm_fwd(x, gm, bt, false, &rmean, &rvar, 1e-5, 0.1, nullptr);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H * W; ++i) {
          const double xv = x.at_flat((b * C + c) * H * W + i);
          const double want = gm.at_flat(c) * (xv - rmean.at_flat(c)) /
                                  std::sqrt(rvar.at_flat(c) + 1e-5) +
                              bt.at_flat(c);
          REQUIRE(mmtest::rel_err(y.at_flat((b * C + c) * H * W + i), want) <
                  1e-10);
        }
    REQUIRE(rmean.at_flat(0) == 0.1);
    REQUIRE(rvar.at_flat(2) == 3.0);
  }
  SECTION("training with a single sample is rejected") {
    Tensor<double> x1 = rand_tensor({1, C, H, W}, rng);
    Tensor<double> rmean({C});
    Tensor<double> rvar = Tensor<double>::full({C}, 1.0);
    REQUIRE_THROWS_AS(batchnorm_fwd(x1, gamma, beta, true, &rmean, &rvar, 1e-5,
                                    0.1, nullptr),
                      Error);
    batchnorm_fwd(x1, gamma, beta, false, &rmean, &rvar, 1e-5, 0.1, nullptr);
  }
}

TEST_CASE("sgd update rule") {
  SECTION("plain step without momentum") {
    ParamStore<double> store;
    store.add("p", Tensor<double>({1}));
    store.get("p").grad.at_flat(0) = 1.0;
    SgdState<double> opt(0.1, 0.0, 10);
    opt.step(store, 0);
    REQUIRE(store.get("p").value.at_flat(0) == Catch::Approx(-0.1));
  }
  SECTION("momentum 0.9, two unit gradients, lr 1 lands on -2.9") {
    ParamStore<double> store;
    store.add("p", Tensor<double>({1}));
    SgdState<double> opt(1.0, 0.9, 1000);
    for (int s = 0; s < 2; ++s) {
      store.zero_grads();
      store.get("p").grad.at_flat(0) = 1.0;
      opt.step(store, 0);
    }
    REQUIRE(store.get("p").value.at_flat(0) == Catch::Approx(-2.9));
  }
  SECTION("zero gradient leaves parameters unchanged") {
    ParamStore<double> store;
    store.add("p", Tensor<double>({2}, {5.0, -3.0}));
    store.zero_grads();
    SgdState<double> opt(0.5, 0.9, 10);
    opt.step(store, 0);
    REQUIRE(store.get("p").value.at_flat(0) == 5.0);
    REQUIRE(store.get("p").value.at_flat(1) == -3.0);
  }
  SECTION("learning rate decays tenfold every decay_epochs") {
    SgdState<double> opt(0.02, 0.9, 20);
    REQUIRE(opt.lr_at_epoch(0) == Catch::Approx(0.02));
    REQUIRE(opt.lr_at_epoch(19) == Catch::Approx(0.02));
    REQUIRE(opt.lr_at_epoch(20) == Catch::Approx(0.002));
    REQUIRE(opt.lr_at_epoch(40) == Catch::Approx(0.0002));
  }
  SECTION("non-trainable parameters are skipped") {
    ParamStore<double> store;
    store.add("p", Tensor<double>({1}, {1.0}));
    store.get("p").trainable = false;
    store.get("p").grad.at_flat(0) = 1.0;
    SgdState<double> opt(0.1, 0.0, 10);
    opt.step(store, 0);
    REQUIRE(store.get("p").value.at_flat(0) == 1.0);
  }
}

TEST_CASE("glorot initialization stays inside its bound") {
  Rng rng(31);
  const int64_t fan_in = 18, fan_out = 32;
  Tensor<double> w =
      glorot_uniform<double>({fan_out, fan_in}, fan_in, fan_out, rng);
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  double lo = 1e300, hi = -1e300;
  for (int64_t i = 0; i < w.numel(); ++i) {
    REQUIRE(std::abs(w.at_flat(i)) <= bound);
    lo = std::min(lo, w.at_flat(i));
    hi = std::max(hi, w.at_flat(i));
  }
  REQUIRE(lo < -0.5 * bound);
  REQUIRE(hi > 0.5 * bound);
}

#include "oracles.hpp"
#include "sp4d/regcheck.hpp"

#include <gtest/gtest.h>

using namespace sp4d;

namespace {

Image2D uniform_random_image(std::mt19937_64& rng, int h, int w, int c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image2D img(h, w, c);
  for (auto& v : img.values) v = u(rng);
  return img;
}

std::vector<double> flat(const std::vector<Vec3>& v) {
  std::vector<double> x;
  for (const auto& p : v) x.insert(x.end(), {p.x(), p.y(), p.z()});
  return x;
}

}  // namespace

TEST(Smooth2D, ConstantFlowIsZero) {
  std::mt19937_64 rng(1);
  FlowMap2D f(6, 7);
  for (auto& v : f.values) v = Vec2(0.3, -1.2);
  const Image2D img = uniform_random_image(rng, 6, 7, 3);
  EXPECT_EQ(smooth2d_loss(f, img), 0.0);
  for (const auto& g : smooth2d_grad(f, img).values) EXPECT_EQ(g, Vec2::Zero());
}

TEST(Smooth2D, RampOnUniformImage) {
  FlowMap2D f(5, 8);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 8; ++c) f.at(r, c) = Vec2(c, 0);
  Image2D img(5, 8, 3);
  std::fill(img.values.begin(), img.values.end(), 0.4);
  EXPECT_DOUBLE_EQ(smooth2d_loss(f, img), 1.0);
  Smooth2DParams l2;
  l2.norm = FlowNorm::kL2;
  EXPECT_DOUBLE_EQ(smooth2d_loss(f, img, l2), 1.0);
}

TEST(Smooth2D, MatchesNaiveLoops) {
  for (int c = 0; c < 40; ++c) {
    std::mt19937_64 rng(100 + c);
    const int h = 1 + static_cast<int>(rng() % 9), w = 1 + static_cast<int>(rng() % 9);
    const FlowMap2D f = random_flowmap(rng, h, w);
    const Image2D img = c % 2 ? uniform_random_image(rng, h, w, 3) : random_image(rng, h, w, 1 + c % 3);
    for (double lambda : {0.0, 1.0, 10.0, 150.0}) {
      Smooth2DParams p;
      p.lambda_edge = lambda;
      EXPECT_NEAR(smooth2d_loss(f, img, p), oracle::smooth2d(f, img, lambda), 1e-12);
      p.norm = FlowNorm::kL2;
      EXPECT_NEAR(smooth2d_loss(f, img, p), oracle::smooth2d(f, img, lambda, false), 1e-12);
    }
  }
}

TEST(Smooth2D, GradientMatchesFiniteDifferences) {
  for (int c = 0; c < 25; ++c) {
    std::mt19937_64 rng(200 + c);
    const FlowMap2D f = random_flowmap(rng, 10, 12);
    const Image2D img = random_image(rng, 10, 12, 3);
    for (FlowNorm norm : {FlowNorm::kL1, FlowNorm::kL2}) {
      Smooth2DParams p;
      p.norm = norm;
      const FlowMap2D g = smooth2d_grad(f, img, p);
      std::vector<double> x, a;
      for (std::size_t i = 0; i < f.values.size(); ++i) {
        x.insert(x.end(), {f.values[i].x(), f.values[i].y()});
        a.insert(a.end(), {g.values[i].x(), g.values[i].y()});
      }
      auto loss = [&](const std::vector<double>& q) {
        FlowMap2D ff = f;
        for (std::size_t i = 0; i < ff.values.size(); ++i) ff.values[i] = Vec2(q[2 * i], q[2 * i + 1]);
        return smooth2d_loss(ff, img, p);
      };
      EXPECT_LE(oracle::max_relative_error(a, oracle::numeric_gradient(loss, x, 1e-6), 1e-4), 1e-5);
      EXPECT_LE(check_smooth2d(f, img, p).max_relative_error, 1e-5);
    }
  }
}

TEST(Smooth2D, DirectionalDerivative) {
  std::mt19937_64 rng(3);
  const FlowMap2D f = random_flowmap(rng, 8, 8);
  const Image2D img = random_image(rng, 8, 8, 3);
  const FlowMap2D g = smooth2d_grad(f, img);
  const double base = smooth2d_loss(f, img);
  for (double delta : {1e-3, 1e-4, 1e-5}) {
    FlowMap2D p = f;
    p.at(4, 3) += Vec2(delta, -0.5 * delta);
    const double predicted = g.at(4, 3).dot(Vec2(delta, -0.5 * delta));
    EXPECT_LE(std::fabs(smooth2d_loss(p, img) - base - predicted), 10 * delta * delta);
  }
}

TEST(Smooth2D, EdgesNeverIncreaseLoss) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int c = 0; c < 50; ++c) {
    const FlowMap2D f = random_flowmap(rng, 6, 6);
    Image2D img(6, 6, 1);
    for (auto& v : img.values) v = 0.5;
    Smooth2DParams p;
    p.lambda_edge = 5.0;
    double prev = smooth2d_loss(f, img, p);
    // Grow a step edge between columns 2 and 3.
    for (double step : {0.05, 0.1, 0.2, 0.4}) {
      for (int r = 0; r < 6; ++r)
        for (int col = 3; col < 6; ++col) img.at(r, col, 0) = 0.5 + step;
      const double now = smooth2d_loss(f, img, p);
      EXPECT_LE(now, prev);
      EXPECT_GE(now, 0.0);
      prev = now;
    }
  }
}

TEST(Smooth2D, DimensionMismatch) {
  EXPECT_THROW(smooth2d_loss(FlowMap2D(3, 4), Image2D(4, 3, 1)), ParameterError);
  EXPECT_THROW(smooth2d_grad(FlowMap2D(3, 4), Image2D(3, 5, 1)), ParameterError);
}

TEST(Smooth3D, Examples) {
  VelocityField3D two;
  two.positions = {{0, 0, 0}, {1, 0, 0}};
  two.velocities = {{1, 0, 0}, {0, 0, 0}};
  two.k = 1;
  EXPECT_DOUBLE_EQ(smooth3d_loss(two), 1.0);

  std::mt19937_64 rng(5);
  VelocityField3D uni = random_velocity_field(rng, 40, 8);
  for (auto& v : uni.velocities) v = Vec3(0.2, -0.7, 1.5);
  EXPECT_EQ(smooth3d_loss(uni), 0.0);
  for (const auto& g : smooth3d_grad(uni)) EXPECT_EQ(g, Vec3::Zero());
}

TEST(Smooth3D, Errors) {
  VelocityField3D f;
  f.positions = {{0, 0, 0}, {1, 0, 0}};
  f.velocities = {{0, 0, 0}, {0, 0, 0}};
  f.k = 2;
  EXPECT_THROW(smooth3d_loss(f), ParameterError);
  f.k = 0;
  EXPECT_THROW(smooth3d_loss(f), ParameterError);
  f.k = 1;
  f.velocities.pop_back();
  EXPECT_THROW(smooth3d_loss(f), ParameterError);
}

TEST(Smooth3D, MatchesNaiveLoops) {
  for (int c = 0; c < 40; ++c) {
    std::mt19937_64 rng(300 + c);
    const std::size_t k = 1 + rng() % 10;
    const VelocityField3D f = random_velocity_field(rng, k + 1 + rng() % 60, k);
    EXPECT_NEAR(smooth3d_loss(f), oracle::smooth3d(f.positions, f.velocities, f.k), 1e-12);
  }
}

TEST(Smooth3D, GradientMatchesFiniteDifferences) {
  for (int c = 0; c < 25; ++c) {
    std::mt19937_64 rng(400 + c);
    const VelocityField3D f = random_velocity_field(rng, 60, 8);
    auto loss = [&](const std::vector<double>& q) {
      std::vector<Vec3> v(f.velocities.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = Vec3(q[3 * i], q[3 * i + 1], q[3 * i + 2]);
      return oracle::smooth3d(f.positions, v, f.k);
    };
    const auto a = flat(smooth3d_grad(f));
    EXPECT_LE(oracle::max_relative_error(a, oracle::numeric_gradient(loss, flat(f.velocities), 1e-6), 1e-4), 1e-5);
    EXPECT_LE(check_smooth3d(f).max_relative_error, 1e-5);
  }
}

TEST(Smooth3D, TranslationInvarianceAndNonNegativity) {
  std::mt19937_64 rng(6);
  for (int c = 0; c < 50; ++c) {
    VelocityField3D f = random_velocity_field(rng, 30, 5);
    const double base = smooth3d_loss(f);
    EXPECT_GE(base, 0.0);
    const Vec3 shift = oracle::random_points(rng, 1, 10.0)[0];
    for (auto& v : f.velocities) v += shift;
    EXPECT_NEAR(smooth3d_loss(f), base, 1e-12 * std::max(1.0, base));
  }
}

TEST(Smooth3D, SymmetricGraphGradientSumsToZero) {
  // Tight clusters of four with K=3: every neighbor relation is mutual.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  VelocityField3D f = random_velocity_field(rng, 0, 3);
  for (int c = 0; c < 10; ++c) {
    for (int m = 0; m < 4; ++m) {
      f.positions.emplace_back(10.0 * c + jitter(rng), jitter(rng), jitter(rng));
      f.velocities.push_back(oracle::random_points(rng, 1, 1.0)[0]);
    }
  }
  const KnnGraph g = velocity_graph(f);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j : g.neighbors[i]) {
      const auto& back = g.neighbors[j];
      ASSERT_NE(std::find(back.begin(), back.end(), i), back.end());
    }
  Vec3 sum = Vec3::Zero();
  for (const auto& v : smooth3d_grad(f)) sum += v;
  EXPECT_LE(sum.norm(), 1e-12);
}

TEST(Smooth3D, VelocitiesFromOffsets) {
  const std::vector<Vec3> a{{0, 0, 0}, {1, 1, 1}}, b{{1, 0, 0}, {1, 2, 1}};
  EXPECT_EQ(velocities_from_offsets(a, b), (std::vector<Vec3>{{1, 0, 0}, {0, 1, 0}}));
  EXPECT_THROW(velocities_from_offsets(a, std::vector<Vec3>{{0, 0, 0}}), ParameterError);
}

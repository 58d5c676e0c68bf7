#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "occkit/head/gradcheck.hpp"
#include "occkit/head/model.hpp"

using namespace occkit;
using namespace occkit::head;

namespace {

HeadConfig tiny_mlp_config() {
  HeadConfig c;
  c.bev_channels = 2;
  c.mlp_hidden = 1;
  c.depth = 1;
  c.voxel_channels = 1;
  return c;
}

Volume random_volume(std::size_t n, std::size_t ch, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Volume v = Volume::zeros(n, n, n, ch);
  for (double& x : v.data) x = d(rng);
  return v;
}

// Straight-line UNet over plain arrays, independent of the library layers.
struct RefVol {
  int n = 0, c = 0;
  std::vector<double> d;
  RefVol(int n_, int c_) : n(n_), c(c_), d(static_cast<std::size_t>(n_ * n_ * n_ * c_), 0.0) {}
  double& at(int ch, int x, int y, int z) { return d[static_cast<std::size_t>(((ch * n + x) * n + y) * n + z)]; }
  double get(int ch, int x, int y, int z) const {
    if (x < 0 || y < 0 || z < 0 || x >= n || y >= n || z >= n) return 0.0;
    return d[static_cast<std::size_t>(((ch * n + x) * n + y) * n + z)];
  }
};

RefVol ref_conv(const RefVol& in, const ConvLayer& k) {
  RefVol out(in.n, static_cast<int>(k.out));
  for (int o = 0; o < out.c; ++o)
    for (int x = 0; x < in.n; ++x)
      for (int y = 0; y < in.n; ++y)
        for (int z = 0; z < in.n; ++z) {
          double s = k.bias[o];
          for (int i = 0; i < in.c; ++i)
            for (int a = 0; a < 3; ++a)
              for (int b = 0; b < 3; ++b)
                for (int c = 0; c < 3; ++c) {
                  const double w = k.kernel[static_cast<std::size_t>((((o * in.c + i) * 3 + a) * 3 + b) * 3 + c)];
                  s += w * in.get(i, x + a - 1, y + b - 1, z + c - 1);
                }
          out.at(o, x, y, z) = std::tanh(s);
        }
  return out;
}

RefVol ref_pool(const RefVol& in) {
  RefVol out(in.n / 2, in.c);
  for (int ch = 0; ch < in.c; ++ch)
    for (int x = 0; x < out.n; ++x)
      for (int y = 0; y < out.n; ++y)
        for (int z = 0; z < out.n; ++z) {
          double s = 0.0;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int c = 0; c < 2; ++c) s += in.get(ch, 2 * x + a, 2 * y + b, 2 * z + c);
          out.at(ch, x, y, z) = s / 8.0;
        }
  return out;
}

RefVol ref_up_concat(const RefVol& low, const RefVol& skip) {
  RefVol out(skip.n, low.c + skip.c);
  for (int x = 0; x < skip.n; ++x)
    for (int y = 0; y < skip.n; ++y)
      for (int z = 0; z < skip.n; ++z) {
        for (int ch = 0; ch < low.c; ++ch) out.at(ch, x, y, z) = low.get(ch, x / 2, y / 2, z / 2);
        for (int ch = 0; ch < skip.c; ++ch) out.at(low.c + ch, x, y, z) = skip.get(ch, x, y, z);
      }
  return out;
}

RefVol ref_unet(const RefVol& in, const HeadParams& p) {
  const RefVol s1 = ref_conv(in, p.enc1);
  const RefVol s2 = ref_conv(ref_pool(s1), p.enc2);
  const RefVol s3 = ref_conv(ref_pool(s2), p.enc3);
  const RefVol b = ref_conv(ref_pool(s3), p.bottleneck);
  const RefVol d3 = ref_conv(ref_up_concat(b, s3), p.dec3);
  const RefVol d2 = ref_conv(ref_up_concat(d3, s2), p.dec2);
  return ref_conv(ref_up_concat(d2, s1), p.dec1);
}

RefVol to_ref(const Volume& v) {
  RefVol r(static_cast<int>(v.h), static_cast<int>(v.ch));
  for (int ch = 0; ch < r.c; ++ch)
    for (int x = 0; x < r.n; ++x)
      for (int y = 0; y < r.n; ++y)
        for (int z = 0; z < r.n; ++z) r.at(ch, x, y, z) = v.at(x, y, z, ch);
  return r;
}

// Per-axis interval of voxels a single-voxel change can reach.
struct Span {
  int lo, hi;
};
Span conv_span(Span s, int n) { return {std::max(0, s.lo - 1), std::min(n - 1, s.hi + 1)}; }
Span pool_span(Span s) { return {s.lo / 2, s.hi / 2}; }
Span up_span(Span s) { return {2 * s.lo, 2 * s.hi + 1}; }
Span hull(Span a, Span b) { return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)}; }

Span unet_reach(int p, int n) {
  const Span s1 = conv_span({p, p}, n);
  const Span s2 = conv_span(pool_span(s1), n / 2);
  const Span s3 = conv_span(pool_span(s2), n / 4);
  const Span b = conv_span(pool_span(s3), n / 8);
  const Span d3 = conv_span(hull(up_span(b), s3), n / 4);
  const Span d2 = conv_span(hull(up_span(d3), s2), n / 2);
  return conv_span(hull(up_span(d2), s1), n);
}

}  // namespace

TEST(MlpDecode, HandEvaluated) {
  HeadParams p = HeadParams::zeros(tiny_mlp_config());
  p.mlp_in.weight = {1.0, 1.0};
  p.mlp_out.weight = {1.0};
  EXPECT_EQ(mlp_decode(BevQueryGrid(1, 1, 2, {0.0, 0.0}), p).data[0], 0.0);
  EXPECT_NEAR(mlp_decode(BevQueryGrid(1, 1, 2, {1.0, 1.0}), p).data[0], 0.96402758, 1e-8);
  EXPECT_DOUBLE_EQ(mlp_decode(BevQueryGrid(1, 1, 2, {1.0, 1.0}), p).data[0], std::tanh(2.0));
}

TEST(MlpDecode, ZeroParamsGiveZeroVolume) {
  const auto p = HeadParams::zeros(HeadConfig{});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  BevQueryGrid q = BevQueryGrid::zeros(4, 4, 4);
  for (double& x : q.data) x = d(rng);
  const auto v = mlp_decode(q, p);
  EXPECT_EQ(v.h, 4u);
  EXPECT_EQ(v.z, 8u);
  for (double x : v.data) EXPECT_EQ(x, 0.0);
}

TEST(MlpDecode, ChangingOneCellTouchesOnlyItsColumn) {
  const auto p = HeadParams::random(HeadConfig{}, 3);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d;
  BevQueryGrid q = BevQueryGrid::zeros(5, 6, 4);
  for (double& x : q.data) x = d(rng);
  const auto before = mlp_decode(q, p);
  q.cell(2 * 6 + 3)[1] += 0.7;
  const auto after = mlp_decode(q, p);
  for (std::size_t x = 0; x < 5; ++x)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t k = 0; k < 8; ++k) {
        const bool same = after.at(x, y, k, 0) == before.at(x, y, k, 0);
        if (x == 2 && y == 3) {
          EXPECT_FALSE(same);
        } else {
          EXPECT_TRUE(same);
        }
      }
}

TEST(MlpDecode, RejectsWrongWidth) {
  EXPECT_THROW(mlp_decode(BevQueryGrid::zeros(2, 2, 3), HeadParams::zeros(HeadConfig{})), ShapeError);
}

TEST(Unet, ShapeContract) {
  std::mt19937_64 rng(4);
  HeadConfig cfg;
  cfg.out_channels = 3;
  const auto p = HeadParams::random(cfg, 5);
  const auto out = unet3d_forward(random_volume(8, 1, rng), p);
  EXPECT_EQ(out.h, 8u);
  EXPECT_EQ(out.w, 8u);
  EXPECT_EQ(out.z, 8u);
  EXPECT_EQ(out.ch, 3u);
  EXPECT_THROW(unet3d_forward(Volume::zeros(8, 8, 12, 1), p), ShapeError);
  EXPECT_THROW(unet3d_forward(Volume::zeros(8, 8, 8, 2), p), ShapeError);
}

TEST(Unet, ZeroParamsGiveZeroOutput) {
  std::mt19937_64 rng(6);
  const auto out = unet3d_forward(random_volume(8, 1, rng), HeadParams::zeros(HeadConfig{}));
  for (double x : out.data) EXPECT_EQ(x, 0.0);
}

TEST(Unet, DeltaImpulseMatchesReference) {
  HeadConfig cfg;
  cfg.unet_widths = {1, 1, 1, 1};
  cfg.out_channels = 1;
  HeadParams p = HeadParams::zeros(cfg);
  // Identity-like kernels: center tap 1, plus a small neighbour tap so
  // orientation errors show up.
  for (ConvLayer* c : p.convs()) {
    for (std::size_t o = 0; o < c->out; ++o)
      for (std::size_t i = 0; i < c->in; ++i) {
        c->kernel[c->tap(o, i, 13)] = 1.0;
        c->kernel[c->tap(o, i, 14)] = 0.25;
        c->kernel[c->tap(o, i, 4)] = -0.5;
      }
  }
  Volume delta = Volume::zeros(8, 8, 8, 1);
  delta.at(3, 5, 2, 0) = 1.0;
  const auto got = unet3d_forward(delta, p);
  const RefVol want = ref_unet(to_ref(delta), p);
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y)
      for (int z = 0; z < 8; ++z) ASSERT_NEAR(got.at(x, y, z, 0), want.get(0, x, y, z), 1e-14);
}

TEST(Unet, RandomParamsMatchReference) {
  std::mt19937_64 rng(7);
  HeadConfig cfg;
  cfg.unet_widths = {3, 2, 2, 1};
  cfg.out_channels = 2;
  const auto p = HeadParams::random(cfg, 8);
  const auto in = random_volume(8, 1, rng);
  const auto got = unet3d_forward(in, p);
  const RefVol want = ref_unet(to_ref(in), p);
  for (int ch = 0; ch < 2; ++ch)
    for (int x = 0; x < 8; ++x)
      for (int y = 0; y < 8; ++y)
        for (int z = 0; z < 8; ++z) ASSERT_NEAR(got.at(x, y, z, ch), want.get(ch, x, y, z), 1e-13);
}

TEST(Unet, PerturbationStaysInReceptiveField) {
  std::mt19937_64 rng(9);
  const auto p = HeadParams::random(HeadConfig{}, 10);
  const int n = 64;
  const auto base = random_volume(n, 1, rng);
  const auto ref = unet3d_forward(base, p);
  for (const std::array<int, 3> at : {std::array<int, 3>{0, 0, 0}, {13, 50, 5}, {63, 2, 60}}) {
    Volume bumped = base;
    bumped.at(at[0], at[1], at[2], 0) += 0.5;
    const auto out = unet3d_forward(bumped, p);
    const Span rx = unet_reach(at[0], n), ry = unet_reach(at[1], n), rz = unet_reach(at[2], n);
    std::size_t changed = 0, outside = 0;
    for (int x = 0; x < n; ++x)
      for (int y = 0; y < n; ++y)
        for (int z = 0; z < n; ++z) {
          const bool in = x >= rx.lo && x <= rx.hi && y >= ry.lo && y <= ry.hi && z >= rz.lo && z <= rz.hi;
          for (std::size_t c = 0; c < out.ch; ++c) {
            if (out.at(x, y, z, c) == ref.at(x, y, z, c)) continue;
            ++changed;
            if (!in) ++outside;
          }
        }
    EXPECT_GT(changed, 0u);
    EXPECT_EQ(outside, 0u);
    EXPECT_LT(rx.hi - rx.lo + 1, n);
  }
}

TEST(Classify, ZeroWeightsGiveBias) {
  HeadConfig cfg;
  cfg.num_classes = 4;
  HeadParams p = HeadParams::zeros(cfg);
  p.classifier.bias = {0.5, -1.0, 2.0, 0.0};
  std::mt19937_64 rng(11);
  const auto logits = classify(random_volume(2, 2, rng), p);
  for (std::size_t v = 0; v < logits.voxels(); ++v)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(logits.data[v * 4 + c], p.classifier.bias[c]);
}

TEST(Classify, UnitFeatureCopiesWeightColumn) {
  HeadConfig cfg;
  cfg.out_channels = 1;
  cfg.num_classes = 3;
  HeadParams p = HeadParams::zeros(cfg);
  p.classifier.weight = {0.1, -0.2, 0.3};
  Volume ones = Volume::zeros(2, 2, 2, 1);
  std::fill(ones.data.begin(), ones.data.end(), 1.0);
  const auto logits = classify(ones, p);
  for (std::size_t v = 0; v < 8; ++v)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(logits.data[v * 3 + c], p.classifier.weight[c]);
}

TEST(Classify, SingleVoxelMatrixProduct) {
  HeadConfig cfg;
  cfg.out_channels = 3;
  cfg.num_classes = 2;
  const auto p = HeadParams::random(cfg, 12);
  const Volume f(1, 1, 1, 3, {0.3, -1.2, 2.0});
  const auto logits = classify(f, p);
  for (std::size_t c = 0; c < 2; ++c) {
    const double* w = p.classifier.weight.data() + c * 3;
    EXPECT_NEAR(logits.data[c], w[0] * 0.3 + w[1] * -1.2 + w[2] * 2.0 + p.classifier.bias[c], 1e-15);
  }
}

TEST(Backward, UniformLogitsClassifierBias) {
  HeadConfig cfg;
  cfg.num_classes = 5;
  HeadParams p = HeadParams::zeros(cfg);
  p.loss_weights = {1.0, 0.0};
  auto toy = make_toy_problem(13, cfg);
  const auto g = backward(toy.queries, toy.labels, &toy.mask, p);
  std::vector<double> want(5, 0.0);
  const double n = static_cast<double>(toy.mask.count());
  for (std::size_t v = 0; v < toy.labels.size(); ++v) {
    if (!toy.mask[v]) continue;
    for (std::size_t c = 0; c < 5; ++c) want[c] += (0.2 - (toy.labels[v] == c ? 1.0 : 0.0)) / n;
  }
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(g.params.classifier.bias[c], want[c], 1e-14);
  EXPECT_NEAR(g.loss, std::log(5.0), 1e-14);
}

TEST(Backward, MatchesFiniteDifferences) {
  const auto toy = make_toy_problem(0, HeadConfig{});
  const auto r = check_gradients(toy.queries, toy.labels, &toy.mask, toy.params);
  EXPECT_EQ(r.checked, toy.params.parameter_count());
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_tensor << "[" << r.worst_index << "] analytic "
                                   << r.worst_analytic << " numeric " << r.worst_numeric;
}

TEST(Backward, MatchesFiniteDifferencesWiderConfig) {
  HeadConfig cfg;
  cfg.bev_channels = 3;
  cfg.mlp_hidden = 5;
  cfg.voxel_channels = 2;
  cfg.unet_widths = {3, 2, 2, 1};
  cfg.out_channels = 3;
  cfg.num_classes = 6;
  auto toy = make_toy_problem(1, cfg);
  toy.params.loss_weights = {0.7, 1.6};
  const auto r = check_gradients(toy.queries, toy.labels, &toy.mask, toy.params);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_tensor << "[" << r.worst_index << "]";
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
  auto toy = make_toy_problem(2, HeadConfig{});
  const auto g = backward(toy.queries, toy.labels, &toy.mask, toy.params);
  const double h = 1e-6;
  for (std::size_t i = 0; i < toy.queries.data.size(); i += 7) {
    const double saved = toy.queries.data[i];
    toy.queries.data[i] = saved + h;
    const double up = head_loss(toy.queries, toy.labels, &toy.mask, toy.params);
    toy.queries.data[i] = saved - h;
    const double dn = head_loss(toy.queries, toy.labels, &toy.mask, toy.params);
    toy.queries.data[i] = saved;
    EXPECT_LE(relative_error(g.input.data[i], (up - dn) / (2 * h), 1e-5), 1e-4);
  }
}

TEST(Backward, CorruptedDiceGradientIsCaught) {
  const auto toy = make_toy_problem(0, HeadConfig{});
  GradCheckOptions opts;
  opts.backward.corrupt_dice_gradient = true;
  EXPECT_GT(check_gradients(toy.queries, toy.labels, &toy.mask, toy.params, opts).max_rel_error, 1e-4);
}

TEST(Backward, SmallStepDoesNotIncreaseLoss) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto toy = make_toy_problem(100 + seed, HeadConfig{});
    const auto g = backward(toy.queries, toy.labels, &toy.mask, toy.params);
    HeadParams stepped = toy.params;
    std::vector<const std::vector<double>*> grads;
    g.params.for_each_tensor([&](const std::string&, const std::vector<double>& v,
                                 const std::vector<std::size_t>&) { grads.push_back(&v); });
    std::size_t t = 0;
    stepped.for_each_tensor([&](const std::string&, std::vector<double>& v, const std::vector<std::size_t>&) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 1e-3 * (*grads[t])[i];
      ++t;
    });
    EXPECT_LE(head_loss(toy.queries, toy.labels, &toy.mask, stepped), g.loss) << "seed " << seed;
  }
}

// With kernels symmetric under x -> -x and inputs mirrored across the
// volume's x midplane, mirrored BEV cells carry identical queries and must
// receive identical input gradients.
TEST(Backward, MirroredCellsGetEqualInputGradients) {
  HeadConfig cfg;
  auto toy = make_toy_problem(21, cfg);
  HeadParams& p = toy.params;
  for (ConvLayer* c : p.convs()) {
    for (std::size_t o = 0; o < c->out; ++o)
      for (std::size_t i = 0; i < c->in; ++i)
        for (std::size_t t = 0; t < 9; ++t) c->kernel[c->tap(o, i, 18 + t)] = c->kernel[c->tap(o, i, t)];
  }
  const std::size_t h = toy.queries.h, w = toy.queries.w, d = cfg.depth;
  std::vector<Label> labels(toy.labels.labels().begin(), toy.labels.labels().end());
  std::vector<std::uint8_t> bits(toy.mask.bits().begin(), toy.mask.bits().end());
  for (std::size_t x = h / 2; x < h; ++x)
    for (std::size_t y = 0; y < w; ++y) {
      const std::size_t src = (h - 1 - x) * w + y, dst = x * w + y;
      std::copy_n(toy.queries.cell(src), toy.queries.c, toy.queries.cell(dst));
      for (std::size_t k = 0; k < d; ++k) {
        labels[dst * d + k] = labels[src * d + k];
        bits[dst * d + k] = bits[src * d + k];
      }
    }
  const LabelGrid gt(toy.labels.spec(), labels);
  const VoxelMask mask(toy.mask.spec(), bits);
  const auto g = backward(toy.queries, gt, &mask, p);
  double scale = 0.0;
  for (double v : g.input.data) scale = std::max(scale, std::abs(v));
  ASSERT_GT(scale, 0.0);
  for (std::size_t x = 0; x < h / 2; ++x)
    for (std::size_t y = 0; y < w; ++y)
      for (std::size_t c = 0; c < toy.queries.c; ++c) {
        const double a = g.input.cell(x * w + y)[c];
        const double b = g.input.cell((h - 1 - x) * w + y)[c];
        EXPECT_NEAR(a, b, 1e-12 * scale);
      }
}

TEST(HeadParams, RandomIsSeededAndValidated) {
  EXPECT_EQ(HeadParams::random(HeadConfig{}, 4), HeadParams::random(HeadConfig{}, 4));
  EXPECT_NE(HeadParams::random(HeadConfig{}, 4), HeadParams::random(HeadConfig{}, 5));
  HeadParams p = HeadParams::zeros(HeadConfig{});
  p.dec2.bias.push_back(0.0);
  EXPECT_THROW(p.validate(), ShapeError);
  p = HeadParams::zeros(HeadConfig{});
  p.loss_weights = {0.0, 0.0};
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(HeadParams, TensorOrderAndCount) {
  const auto p = HeadParams::zeros(HeadConfig{});
  std::vector<std::string> names;
  std::size_t total = 0;
  p.for_each_tensor([&](const std::string& n, const std::vector<double>& v, const std::vector<std::size_t>& shape) {
    names.push_back(n);
    std::size_t prod = 1;
    for (auto s : shape) prod *= s;
    EXPECT_EQ(prod, v.size()) << n;
    total += v.size();
  });
  EXPECT_EQ(names.front(), "mlp.fc1.weight");
  EXPECT_EQ(names.back(), "cls.bias");
  EXPECT_EQ(names.size(), 20u);
  EXPECT_EQ(total, p.parameter_count());
}

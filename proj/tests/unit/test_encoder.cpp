// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "doctest.h"
#include "soar/encoder.hpp"
#include "soar/errors.hpp"
#include "test_support.hpp"

using namespace soar;
using namespace soar::encoder;

namespace {

ImageTensor random_image(std::mt19937_64& rng, int h, int w, int c) {
  return {h, w, c, soar::testing::uniform_vector(rng, static_cast<std::size_t>(h) * w * c, 0, 1)};
}

EncoderConfig toy_config() {
  EncoderConfig cfg;
  cfg.image_h = 8;
  cfg.image_w = 8;
  cfg.channels = 2;
  cfg.patch_mode = PatchMode::nonoverlap;
  cfg.patch_size = 4;
  cfg.embed_dim = 4;
  cfg.inner_dim = 5;
  cfg.state_dim = 3;
  cfg.depth = 2;
  cfg.num_classes = 3;
  cfg.mlp_hidden = 6;
  cfg.conv_width = 3;
  cfg.seed = 42;
  return cfg;
}

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.image_h = 2;
  cfg.image_w = 2;
  cfg.channels = 1;
  cfg.patch_mode = PatchMode::nonoverlap;
  cfg.patch_size = 2;
  cfg.embed_dim = 1;
  cfg.inner_dim = 1;
  cfg.state_dim = 1;
  cfg.depth = 1;
  cfg.num_classes = 1;
  cfg.mlp_hidden = 1;
  cfg.conv_width = 4;
  return cfg;
}

// Counts window positions by sliding a k-window one pixel at a time.
int enumerate_windows(int h, int w, int k, int s) {
  int count = 0;
  for (int y = 0; y + k <= h; ++y)
    for (int x = 0; x + k <= w; ++x)
      if (y % s == 0 && x % s == 0) ++count;
  return count;
}

// Init-scale weights make every block nearly the identity; add spread so the
// scans carry signal.
EncoderWeights spread_weights(const EncoderConfig& cfg, std::mt19937_64& rng, double sd = 0.4) {
  auto w = init_weights(cfg);
  std::normal_distribution<double> normal(0.0, sd);
  for (auto& t : tensors(w)) {
    if (t.name.ends_with(".evolution")) continue;
    for (std::size_t i = 0; i < t.size; ++i) t.data[i] += normal(rng);
  }
  return w;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("soar_encoder_" + std::to_string(::getpid()) + "_" + std::to_string(rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("patchify geometry") {
  std::mt19937_64 rng(1);
  EncoderConfig cfg;
  cfg.image_h = cfg.image_w = 16;
  cfg.channels = 1;
  cfg.patch_mode = PatchMode::nonoverlap;
  cfg.patch_size = 16;
  const auto img = random_image(rng, 16, 16, 1);
  const auto p = patchify(img, cfg);
  REQUIRE(p.rows() == 1);
  REQUIRE(p.cols() == 256);
  for (int i = 0; i < 256; ++i) CHECK(p(0, i) == img.data[i]);

  cfg.image_h = cfg.image_w = 32;
  CHECK(patchify(random_image(rng, 32, 32, 1), cfg).rows() == 4);

  EncoderConfig reference;
  reference.image_h = reference.image_w = 224;
  reference.channels = 3;
  reference.patch_mode = PatchMode::conv;
  reference.kernel = 16;
  reference.stride = 8;
  const auto big = patchify(random_image(rng, 224, 224, 3), reference);
  CHECK(big.rows() == 729);
  CHECK(big.cols() == 16 * 16 * 3);
  CHECK_THROWS_AS(patchify(random_image(rng, 8, 8, 3), reference), ContractError);
}

TEST_CASE("overlapping patch contents") {
  EncoderConfig cfg;
  cfg.image_h = 3;
  cfg.image_w = 4;
  cfg.channels = 1;
  cfg.patch_mode = PatchMode::conv;
  cfg.kernel = 2;
  cfg.stride = 1;
  ImageTensor img{3, 4, 1, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
  const auto p = patchify(img, cfg);
  REQUIRE(p.rows() == 6);
  // window at (y=1, x=2): rows 1-2, cols 2-3
  CHECK(p(5, 0) == 6);
  CHECK(p(5, 1) == 7);
  CHECK(p(5, 2) == 10);
  CHECK(p(5, 3) == 11);
}

TEST_CASE("token count matches window enumeration on 50 geometries") {
  std::mt19937_64 rng(50);
  std::uniform_int_distribution<int> kd(1, 12), sd(1, 6), nd(0, 8);
  for (int trial = 0; trial < 50; ++trial) {
    EncoderConfig cfg;
    cfg.patch_mode = PatchMode::conv;
    cfg.kernel = kd(rng);
    cfg.stride = sd(rng);
    cfg.image_h = cfg.kernel + cfg.stride * nd(rng);
    cfg.image_w = cfg.kernel + cfg.stride * nd(rng);
    cfg.validate();
    CHECK(cfg.token_count() == enumerate_windows(cfg.image_h, cfg.image_w, cfg.kernel, cfg.stride));
  }
}

TEST_CASE("geometry that does not tile is rejected") {
  EncoderConfig cfg;
  cfg.image_h = 30;
  cfg.image_w = 32;
  cfg.patch_mode = PatchMode::nonoverlap;
  cfg.patch_size = 16;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.patch_mode = PatchMode::conv;
  cfg.kernel = 16;
  cfg.stride = 8;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("embed_tokens") {
  MatrixXd patches = MatrixXd::Random(3, 4);
  VectorXd cls(2);
  cls << 0.5, -1.5;
  const auto v = embed_tokens(patches, MatrixXd::Zero(4, 2), cls, MatrixXd::Zero(4, 2));
  REQUIRE(v.rows() == 4);
  REQUIRE(v.cols() == 2);
  CHECK(v(0, 0) == 0.5);
  CHECK(v(0, 1) == -1.5);
  CHECK(v.bottomRows(3).isZero(0));

  // one patch of ones, Z = [[1, 2], [3, 4]]: row 1 = column sums (4, 6)
  MatrixXd ones = MatrixXd::Ones(1, 2);
  MatrixXd z(2, 2);
  z << 1, 2, 3, 4;
  MatrixXd pos(2, 2);
  pos << 0, 0, 10, 20;
  const auto w = embed_tokens(ones, z, VectorXd::Zero(2), pos);
  CHECK(w(1, 0) == 14.0);
  CHECK(w(1, 1) == 26.0);

  CHECK_THROWS_AS(embed_tokens(ones, z, VectorXd::Zero(3), pos), ContractError);
}

TEST_CASE("block with zero output projection is the identity") {
  auto cfg = toy_config();
  auto w = init_weights(cfg);
  auto& block = w.blocks[0];
  block.out_proj.setZero();
  MatrixXd tokens = MatrixXd::Random(5, cfg.embed_dim);
  const auto out = soar_block(tokens, block);
  CHECK(out.rows() == tokens.rows());
  CHECK(out.cols() == tokens.cols());
  CHECK((out.array() == tokens.array()).all());
}

TEST_CASE("palindromic input with tied directions stays palindromic") {
  auto cfg = toy_config();
  std::mt19937_64 rng(3);
  const auto w = spread_weights(cfg, rng);
  for (const auto combine : {Combine::gated, Combine::sum}) {
    auto block = w.blocks[0];
    block.backward = block.forward;
    MatrixXd half = MatrixXd::Random(3, cfg.embed_dim);
    MatrixXd tokens(5, cfg.embed_dim);
    tokens.topRows(3) = half;
    tokens.row(3) = half.row(1);
    tokens.row(4) = half.row(0);
    const auto out = soar_block(tokens, block, combine);
    CHECK((out - tokens).norm() > 1e-6);
    CHECK((out - out.colwise().reverse().eval()).cwiseAbs().maxCoeff() < 1e-14);

    const auto& untied = w.blocks[0];
    const auto out2 = soar_block(tokens, untied, combine);
    CHECK((out2 - out2.colwise().reverse().eval()).cwiseAbs().maxCoeff() > 1e-9);
  }
}

TEST_CASE("block rejects mismatched width and non-finite values") {
  auto cfg = toy_config();
  auto w = init_weights(cfg);
  CHECK_THROWS_AS(soar_block(MatrixXd::Zero(3, cfg.embed_dim + 1), w.blocks[0]), ContractError);
  MatrixXd bad = MatrixXd::Zero(3, cfg.embed_dim);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(soar_block(bad, w.blocks[0]), NumericError);
}

TEST_CASE("init follows the documented scheme") {
  const auto cfg = toy_config();
  const auto w = init_weights(cfg);
  const auto& e = w.blocks[1].evolution;
  for (int c = 0; c < e.rows(); ++c)
    for (int n = 0; n < e.cols(); ++n) CHECK(e(c, n) == -(n + 1.0));
  CHECK(w.blocks[0].norm_scale.isOnes(0));
  CHECK(w.blocks[0].forward.delta_bias.isZero(0));
  CHECK(w.fc2_bias.isZero(0));
  const double sd = std::sqrt(w.pos.array().square().mean());
  CHECK(sd == doctest::Approx(kInitScale).epsilon(0.3));
}

TEST_CASE("encode output and determinism") {
  std::mt19937_64 rng(2);
  auto cfg = toy_config();
  cfg.num_classes = 16;
  const Encoder a(cfg), b(cfg);
  const auto img = random_image(rng, cfg.image_h, cfg.image_w, cfg.channels);
  const auto sa = a.encode(img);
  CHECK(sa.size() == 16);
  const auto sb = b.encode(img);
  CHECK(std::memcmp(sa.data(), sb.data(), sizeof(double) * 16) == 0);
  const auto seq = a.sequence(img);
  CHECK(seq.rows() == cfg.token_count() + 1);
  CHECK(seq.cols() == cfg.embed_dim);

  ImageTensor zero{cfg.image_h, cfg.image_w, cfg.channels,
                   std::vector<double>(img.data.size(), 0.0)};
  ImageTensor shifted = zero;
  for (auto& v : shifted.data) v = 0.7;
  const Encoder spread(cfg, spread_weights(cfg, rng));
  CHECK((spread.encode(zero) - spread.encode(shifted)).cwiseAbs().maxCoeff() > 1e-6);

  cfg.seed = 99;
  const Encoder c(cfg);
  CHECK((c.encode(img) - sa).cwiseAbs().maxCoeff() > 0);
}

TEST_CASE("tiny config matches the hand count") {
  // embed: Z 4 + cls 1 + pos 2 = 7
  // block: norm 2 + in_x 1 + in_z 1 + 2 * (conv 4 + bias 1 + delta 1 + delta bias 1 + F 1 + G 1)
  //        + E 1 + out 1 = 24
  // head: norm 2 + fc1 1 + 1 + fc2 1 + 1 = 6
  const auto cfg = tiny_config();
  const auto b = count_params_gflops(cfg);
  CHECK(b.params == 37);
  CHECK(parameter_count(init_weights(cfg)) == 37);
  // embed 4, in_proj 4, each direction conv 8 + delta 2 + F 2 + G 2 + scan 6, out 2, head 2
  std::uint64_t macs = 0;
  for (const auto& item : b.items) macs += item.macs;
  CHECK(macs == 52);
  CHECK(b.gflops == doctest::Approx(104e-9));
}

TEST_CASE("budget scales as expected") {
  auto cfg = toy_config();
  const auto base = count_params_gflops(cfg);
  CHECK(base.params == parameter_count(init_weights(cfg)));

  auto deeper = cfg;
  deeper.depth *= 2;
  const auto doubled = count_params_gflops(deeper);
  auto block_params = [](const ComputeBudget& b) {
    std::uint64_t total = 0;
    for (const auto& item : b.items)
      if (item.name.starts_with("blocks.")) total += item.params;
    return total;
  };
  CHECK(block_params(doubled) == 2 * block_params(base));
  CHECK(doubled.params - block_params(doubled) == base.params - block_params(base));

  // position embeddings aside, params do not depend on the image size
  auto bigger = cfg;
  bigger.image_h = bigger.image_w = 16;
  const auto big = count_params_gflops(bigger);
  const auto pos_delta = static_cast<std::uint64_t>(bigger.token_count() - cfg.token_count()) *
                         static_cast<std::uint64_t>(cfg.embed_dim);
  CHECK(big.params - pos_delta == base.params);
  CHECK(big.gflops > base.gflops);
}

TEST_CASE("config text round trip and errors") {
  auto cfg = toy_config();
  cfg.combine = Combine::sum;
  const auto back = EncoderConfig::parse(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());

  const auto parsed = EncoderConfig::parse("# comment\n embed_dim = 12  # trailing\n\npatch_mode=nonoverlap\n");
  CHECK(parsed.embed_dim == 12);
  CHECK(parsed.patch_mode == PatchMode::nonoverlap);

  try {
    EncoderConfig::parse("depth = 2\nwidth = 3\n", "model.cfg");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).starts_with("model.cfg:2:"));
  }
  CHECK_THROWS_AS(EncoderConfig::parse("depth = two\n"), ParseError);
  CHECK_THROWS_AS(EncoderConfig::parse("combine = product\n"), ParseError);
  CHECK_THROWS_AS(EncoderConfig::parse("just text\n"), ParseError);
}

TEST_CASE("weights round trip") {
  TempDir dir;
  const auto cfg = toy_config();
  const auto w = init_weights(cfg);
  const auto file = dir.path / "w.bin";
  save_weights(file, w);
  auto loaded = load_weights(file, cfg);
  auto a = tensors(const_cast<EncoderWeights&>(w));
  auto b = tensors(loaded);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(std::equal(a[i].data, a[i].data + a[i].size, b[i].data));
  }

  std::ifstream in(file, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  CHECK(bytes.substr(0, 4) == "SOAR");
  CHECK(bytes[4] == 1);
  // first tensor is embed.patch_proj (32 x 4), its first payload value is row 0 col 0
  const std::size_t header = 4 + 4 + 4 + 4 + std::string("embed.patch_proj").size() + 4 + 16;
  double first;
  std::memcpy(&first, bytes.data() + header, 8);
  CHECK(first == w.patch_proj(0, 0));
  double second;
  std::memcpy(&second, bytes.data() + header + 8, 8);
  CHECK(second == w.patch_proj(0, 1));

  auto other = cfg;
  other.depth = 1;
  CHECK_THROWS_AS(load_weights(file, other), SchemaError);
  {
    std::ofstream out(dir.path / "short.bin", std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_AS(load_weights(dir.path / "short.bin", cfg), IoError);
  {
    std::ofstream out(dir.path / "magic.bin", std::ios::binary);
    out << "NOPE" << bytes.substr(4);
  }
  CHECK_THROWS_AS(load_weights(dir.path / "magic.bin", cfg), IoError);
  CHECK_THROWS_AS(load_weights(dir.path / "missing.bin", cfg), IoError);

  const Encoder e(cfg, std::move(loaded));
  std::mt19937_64 rng(8);
  const auto img = random_image(rng, cfg.image_h, cfg.image_w, cfg.channels);
  CHECK((e.encode(img) - Encoder(cfg).encode(img)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient matches finite differences on sampled weights") {
  for (const auto combine : {Combine::gated, Combine::sum}) {
    auto cfg = toy_config();
    cfg.combine = combine;
    std::mt19937_64 rng(17);
    Encoder enc(cfg, spread_weights(cfg, rng));
    const auto img = random_image(rng, cfg.image_h, cfg.image_w, cfg.channels);
    const VectorXd ones = VectorXd::Ones(cfg.num_classes);
    auto grads = enc.gradient(img, ones);
    auto analytic = tensors(grads);
    auto params = tensors(enc.weights());

    std::vector<std::pair<std::size_t, std::size_t>> flat;
    for (std::size_t t = 0; t < params.size(); ++t)
      for (std::size_t i = 0; i < params[t].size; ++i) flat.emplace_back(t, i);
    std::shuffle(flat.begin(), flat.end(), rng);
    const std::size_t samples = std::max<std::size_t>(flat.size() / 100, 60);
    const double h = 1e-5;
    double worst = 0;
    for (std::size_t s = 0; s < samples; ++s) {
      const auto [t, i] = flat[s];
      double& p = params[t].data[i];
      const double saved = p;
      p = saved + h;
      const double up = enc.encode(img).sum();
      p = saved - h;
      const double down = enc.encode(img).sum();
      p = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = soar::testing::relative_error(analytic[t].data[i], numeric, 1e-6);
      INFO(params[t].name << "[" << i << "] analytic " << analytic[t].data[i] << " numeric "
                          << numeric);
      CHECK(err < 1e-3);
      worst = std::max(worst, err);
    }
    MESSAGE("worst relative error " << worst << " over " << samples << " weights");
  }
}

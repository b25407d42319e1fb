#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include "support/criteria.hpp"

using namespace ctpvt;
namespace fs = std::filesystem;

namespace {

void write_slices(const fs::path& dir, std::size_t count, std::size_t first = 0) {
  fs::create_directories(dir);
  GrayImage img(4, 4);
  for (std::size_t z = first; z < first + count; ++z) {
    std::fill(img.pixels.begin(), img.pixels.end(), static_cast<std::uint16_t>(z % 256));
    char name[16];
    std::snprintf(name, sizeof name, "%03zu.png", z);
    write_png(dir / name, img);
  }
}

bool any_warning_contains(const LoadedDataset& d, const std::string& needle) {
  return std::any_of(d.warnings.begin(), d.warnings.end(),
                     [&](const std::string& w) { return w.find(needle) != std::string::npos; });
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

double mean_unit_intensity(const fs::path& png) {
  const auto v = normalize_intensity(read_png(png));
  double s = 0.0;
  for (float x : v) s += x;
  return s / double(v.size());
}

SyntheticSpec quick_spec(std::size_t per_class, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.positive_cases = per_class;
  spec.negative_cases = per_class;
  spec.min_slices = 50;
  spec.max_slices = 60;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST(LoadDataset, LabelsFromClassDirectories) {
  oracle::TempDir dir("load");
  for (const char* id : {"p1", "p2"}) write_slices(dir.path() / "covid" / id, 2);
  for (const char* id : {"n1", "n2", "n3"}) write_slices(dir.path() / "non-covid" / id, 3);
  const auto d = load_dataset(dir.path());
  ASSERT_EQ(d.cases.size(), 5u);
  EXPECT_EQ(std::count_if(d.cases.begin(), d.cases.end(), [](auto& c) { return c.label == Label::positive; }), 2);
  EXPECT_EQ(std::count_if(d.cases.begin(), d.cases.end(), [](auto& c) { return c.label == Label::negative; }), 3);
  EXPECT_TRUE(d.warnings.empty());
}

TEST(LoadDataset, NumericSliceOrder) {
  oracle::TempDir dir("order");
  write_slices(dir.path() / "covid" / "c", 50);
  const auto d = load_dataset(dir.path());
  ASSERT_EQ(d.cases.size(), 1u);
  ASSERT_EQ(d.cases[0].slice_count(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(detail::numeric_stem(d.cases[0].slice_paths[i]).value(), i);
  }
}

TEST(LoadDataset, NumericNotLexicographicOrder) {
  oracle::TempDir dir("unpadded");
  const fs::path c = dir.path() / "covid" / "c";
  fs::create_directories(c);
  for (const char* name : {"9.png", "10.png", "8.png"}) write_png(c / name, GrayImage(2, 2));
  const auto d = load_dataset(dir.path());
  ASSERT_EQ(d.cases.size(), 1u);
  EXPECT_EQ(d.cases[0].slice_paths[0].filename(), "8.png");
  EXPECT_EQ(d.cases[0].slice_paths[2].filename(), "10.png");
}

TEST(LoadDataset, ReloadIsIdentical) {
  oracle::TempDir dir("reload");
  for (const char* id : {"b", "a", "c"}) write_slices(dir.path() / "covid" / id, 4);
  write_slices(dir.path() / "non-covid" / "z", 2);
  const auto a = load_dataset(dir.path()), b = load_dataset(dir.path());
  ASSERT_EQ(a.cases.size(), b.cases.size());
  for (std::size_t i = 0; i < a.cases.size(); ++i) {
    EXPECT_EQ(a.cases[i].case_id, b.cases[i].case_id);
    EXPECT_EQ(a.cases[i].slice_paths, b.cases[i].slice_paths);
  }
  EXPECT_EQ(a.cases[0].case_id, "a");
}

TEST(LoadDataset, WarningsForProblemCases) {
  oracle::TempDir dir("warn");
  fs::create_directories(dir.path() / "covid" / "empty");
  write_slices(dir.path() / "covid" / "gappy", 3);
  fs::remove(dir.path() / "covid" / "gappy" / "001.png");
  write_slices(dir.path() / "covid" / "named", 2);
  write_png(dir.path() / "covid" / "named" / "scout.png", GrayImage(2, 2));
  std::ofstream(dir.path() / "covid" / "named" / "002.png") << "not an image";
  const auto d = load_dataset(dir.path());
  EXPECT_EQ(d.cases.size(), 2u);
  EXPECT_TRUE(any_warning_contains(d, "empty: no slices"));
  EXPECT_TRUE(any_warning_contains(d, "gappy: slice count 2"));
  EXPECT_TRUE(any_warning_contains(d, "scout.png"));
  EXPECT_TRUE(any_warning_contains(d, "unreadable slice 002.png"));
  EXPECT_TRUE(any_warning_contains(d, "missing class directory non-covid/"));
}

TEST(LoadDataset, UnreadableRootIsFatal) {
  EXPECT_THROW(load_dataset("/nonexistent/root"), io_error);
  oracle::TempDir dir("noclass");
  EXPECT_THROW(load_dataset(dir.path()), io_error);
}

TEST(Png, RoundTripEightAndSixteenBit) {
  oracle::TempDir dir("png");
  for (int depth : {8, 16}) {
    GrayImage img(7, 5, depth);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      img.pixels[i] = static_cast<std::uint16_t>((i * 9973) % (std::size_t(img.max_value()) + 1));
    const fs::path p = dir.path() / ("img" + std::to_string(depth) + ".png");
    write_png(p, img);
    const GrayImage back = read_png(p);
    EXPECT_EQ(back.width, 7u);
    EXPECT_EQ(back.height, 5u);
    EXPECT_EQ(back.bit_depth, depth);
    EXPECT_EQ(back.pixels, img.pixels);
  }
  std::ofstream(dir.path() / "bad.png") << "garbage";
  EXPECT_THROW(read_png(dir.path() / "bad.png"), format_error);
  EXPECT_THROW(read_png(dir.path() / "missing.png"), io_error);
}

TEST(Preprocess, ConstantImageGivesConstantOutput) {
  GrayImage img(20, 30);
  std::fill(img.pixels.begin(), img.pixels.end(), 100);
  for (auto e : {Enhancement::none, Enhancement::histogram_equalization}) {
    PreprocessSpec spec;
    spec.enhancement = e;
    spec.resolution = 16;
    const Tensor t = preprocess_slice(img, spec);
    EXPECT_EQ(t.shape(), (Shape{3, 16, 16}));
    for (float v : t.data()) {
      EXPECT_EQ(v, t[0]);
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Preprocess, UnitRangeForArbitrarySixteenBitInput) {
  Rng rng(4);
  std::uniform_int_distribution<int> px(0, 65535);
  GrayImage img(37, 23, 16);
  for (auto& v : img.pixels) v = static_cast<std::uint16_t>(px(rng));
  img.pixels[0] = 0;
  img.pixels[1] = 65535;
  for (auto e : {Enhancement::none, Enhancement::histogram_equalization}) {
    PreprocessSpec spec;
    spec.enhancement = e;
    const Tensor t = preprocess_slice(img, spec);
    EXPECT_EQ(t.shape(), (Shape{3, 224, 224}));
    const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
    EXPECT_GE(*lo, 0.0f);
    EXPECT_LE(*hi, 1.0f);
  }
}

TEST(Preprocess, ChannelsAreReplicas) {
  GrayImage img(9, 9);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint16_t>(i * 3);
  PreprocessSpec spec;
  spec.resolution = 12;
  const Tensor t = preprocess_slice(img, spec);
  const std::size_t plane = 144;
  for (std::size_t i = 0; i < plane; ++i) {
    EXPECT_EQ(t[i], t[plane + i]);
    EXPECT_EQ(t[i], t[2 * plane + i]);
  }
}

TEST(Preprocess, EqualizedRampHasFlatHistogram) {
  // every level equally populated
  for (int depth : {8, 16}) {
    GrayImage img(depth == 8 ? 512 : 1024, 100, depth);
    const std::size_t levels = std::size_t(img.max_value()) + 1;
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        img.at(x, y) = static_cast<std::uint16_t>(x * levels / img.width);
    const auto eq = equalize_histogram(img);
    std::vector<std::size_t> hist(256, 0);
    for (float v : eq) ++hist[std::min<std::size_t>(255, static_cast<std::size_t>(v * 256.0f))];
    const double mean = double(eq.size()) / 256.0;
    EXPECT_LT(double(*std::max_element(hist.begin(), hist.end())), 2.0 * mean) << depth << "-bit";
  }
}

TEST(Preprocess, IdentityResizeKeepsValues) {
  const std::vector<float> src{0.0f, 0.25f, 0.5f, 1.0f};
  EXPECT_EQ(resize_bilinear(src, 2, 2, 2, 2), src);
  const auto up = resize_bilinear(src, 2, 2, 4, 4);
  EXPECT_EQ(up[0], 0.0f);   // clamped corner
  EXPECT_EQ(up[15], 1.0f);
  EXPECT_FLOAT_EQ(up[1], 0.0625f);  // x = 0.25 between the first two columns
}

TEST(Preprocess, RejectsZeroSizedImage) {
  EXPECT_THROW(preprocess_slice(GrayImage{}, PreprocessSpec{}), std::invalid_argument);
  PreprocessSpec spec;
  spec.resolution = 0;
  EXPECT_THROW(preprocess_slice(GrayImage(2, 2), spec), config_error);
}

TEST(Preprocess, StackSlices) {
  const Tensor a({3, 4, 4}, 1.0f), b({3, 4, 4}, 2.0f);
  const Tensor s = stack_slices({a, b});
  EXPECT_EQ(s.shape(), (Shape{2, 3, 4, 4}));
  EXPECT_EQ(s[48], 2.0f);
  EXPECT_THROW(stack_slices({a, Tensor({3, 5, 5})}), shape_error);
  EXPECT_THROW(stack_slices({}), std::invalid_argument);
}

TEST(Synthetic, ThirtyPerClassLayout) {
  oracle::TempDir dir("synth60");
  SyntheticSpec spec;
  spec.seed = 3;
  spec.image_size = 16;
  const auto m = generate_synthetic(spec, dir.path());
  ASSERT_EQ(m.cases.size(), 60u);
  std::size_t dirs = 0;
  for (const char* cls : {"covid", "non-covid"})
    for (const auto& e : fs::directory_iterator(dir.path() / cls)) dirs += e.is_directory() ? 1 : 0;
  EXPECT_EQ(dirs, 60u);
  for (const auto& c : m.cases) {
    EXPECT_GE(c.slices, 50u);
    EXPECT_LE(c.slices, 700u);
  }
  EXPECT_TRUE(fs::exists(dir.path() / "manifest.json"));
  const auto d = load_dataset(dir.path());
  EXPECT_EQ(d.cases.size(), 60u);
  EXPECT_TRUE(d.warnings.empty());
  for (const auto& c : d.cases) {
    const auto rec = std::find_if(m.cases.begin(), m.cases.end(), [&](auto& r) { return r.case_id == c.case_id; });
    ASSERT_NE(rec, m.cases.end());
    EXPECT_EQ(rec->slices, c.slice_count());
    EXPECT_EQ(rec->label, c.label);
  }
}

TEST(Synthetic, SameSeedByteIdentical) {
  oracle::TempDir a("synth_a"), b("synth_b"), c("synth_c");
  generate_synthetic(quick_spec(2, 8), a.path());
  generate_synthetic(quick_spec(2, 8), b.path());
  generate_synthetic(quick_spec(2, 9), c.path());
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path());
    EXPECT_EQ(file_bytes(e.path()), file_bytes(b.path() / rel)) << rel;
    if (e.path().extension() == ".png" && fs::exists(c.path() / rel))
      differing += file_bytes(e.path()) != file_bytes(c.path() / rel) ? 1 : 0;
    ++files;
  }
  EXPECT_GT(files, 200u);
  EXPECT_GT(differing, 0u);
}

TEST(Synthetic, CentralSliceIntensityMarginAndSeparability) {
  oracle::TempDir dir("synth_sep");
  const SyntheticSpec spec = quick_spec(20, 21);
  generate_synthetic(spec, dir.path());
  const auto d = load_dataset(dir.path());
  std::vector<std::pair<double, bool>> central;
  double pos = 0.0, neg = 0.0;
  std::size_t npos = 0, nneg = 0;
  for (const auto& c : d.cases) {
    const double m = mean_unit_intensity(c.slice_paths[(c.slice_count() - 1) / 2]);
    const bool positive = c.label == Label::positive;
    central.emplace_back(m, positive);
    (positive ? pos : neg) += m;
    ++(positive ? npos : nneg);
  }
  EXPECT_GE(pos / double(npos) - neg / double(nneg), central_intensity_margin(spec));

  // best single mean-intensity threshold
  std::sort(central.begin(), central.end());
  std::size_t best = 0;
  for (std::size_t cut = 0; cut <= central.size(); ++cut) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < central.size(); ++i) correct += (i >= cut) == central[i].second ? 1 : 0;
    best = std::max(best, correct);
  }
  EXPECT_GE(double(best) / double(central.size()), 0.95);
}

TEST(Synthetic, SpecValidation) {
  SyntheticSpec spec;
  spec.min_slices = 40;
  EXPECT_THROW(spec.validate(), config_error);
  spec = SyntheticSpec{};
  spec.max_slices = 701;
  EXPECT_THROW(spec.validate(), config_error);
  spec = SyntheticSpec{};
  spec.positive_cases = spec.negative_cases = 0;
  EXPECT_THROW(spec.validate(), config_error);
}

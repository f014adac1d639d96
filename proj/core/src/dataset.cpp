#include "circuits/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "circuits/error.hpp"
#include "circuits/probes.hpp"

namespace circuits {

namespace {

constexpr char kMagic[] = "CFDATA01";
constexpr std::size_t kMagicSize = 8;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; the spare draw is discarded so the stream stays simple.
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
};

ProbeSpec canvas_spec(std::size_t size, double stroke) {
  ProbeSpec s;
  s.canvas_height = size;
  s.canvas_width = size;
  s.stroke_width = stroke;
  return s;
}

Tensor ring(Sampler& rng, std::size_t size) {
  const double n = static_cast<double>(size);
  const double radius = rng.uniform(0.18, 0.28) * n;
  const double stroke = rng.uniform(1.0, 1.6);
  const double margin = radius + stroke;
  const double cx = rng.uniform(margin, n - margin);
  const double cy = rng.uniform(margin, n - margin);
  std::vector<Segment> segments;
  constexpr int kSteps = 48;
  for (int i = 0; i < kSteps; ++i) {
    const double a0 = 2 * std::numbers::pi * i / kSteps;
    const double a1 = 2 * std::numbers::pi * (i + 1) / kSteps;
    segments.push_back(Segment{{cx + radius * std::cos(a0), cy + radius * std::sin(a0)},
                               {cx + radius * std::cos(a1), cy + radius * std::sin(a1)}});
  }
  return render_segments(canvas_spec(size, stroke), segments);
}

Tensor cross(Sampler& rng, std::size_t size) {
  const double n = static_cast<double>(size);
  const double arm = rng.uniform(0.2, 0.3) * n;
  const double stroke = rng.uniform(1.0, 1.6);
  const double margin = arm + stroke;
  const double cx = rng.uniform(margin, n - margin);
  const double cy = rng.uniform(margin, n - margin);
  return render_segments(canvas_spec(size, stroke), {Segment{{cx - arm, cy}, {cx + arm, cy}},
                                                     Segment{{cx, cy - arm}, {cx, cy + arm}}});
}

Tensor blob(Sampler& rng, std::size_t size, bool right) {
  const double n = static_cast<double>(size);
  const double sigma = rng.uniform(0.06, 0.1) * n;
  const double cx = right ? rng.uniform(0.6, 0.8) * n : rng.uniform(0.2, 0.4) * n;
  const double cy = rng.uniform(0.25, 0.75) * n;
  Tensor t(Shape{1, size, size});
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      const double dx = static_cast<double>(j) + 0.5 - cx;
      const double dy = static_cast<double>(i) + 0.5 - cy;
      t.at(0, i, j) = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    }
  }
  return t;
}

// Low-frequency grating in [0, amplitude] so that every position carries
// signal, as in natural images.
void add_texture(Sampler& rng, Tensor& img, double amplitude) {
  const std::size_t n = img.shape()[1];
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double freq = rng.uniform(0.15, 0.45);
  const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double t = freq * (std::cos(angle) * static_cast<double>(j) + std::sin(angle) * static_cast<double>(i));
      img.at(0, i, j) = std::max(img.at(0, i, j), amplitude * (0.5 + 0.5 * std::sin(t + phase)));
    }
  }
}

Tensor arc_or_corner(Sampler& rng, std::size_t size, ProbeKind kind) {
  const double n = static_cast<double>(size);
  ProbeSpec spec = canvas_spec(size, rng.uniform(1.0, 1.5));
  spec.kind = kind;
  const double radius = rng.uniform(0.2, 0.3) * n;
  const double rotation = rng.uniform(0.0, 360.0);
  const double reach = radius * std::numbers::sqrt2 + spec.stroke_width;
  spec.center = Point{rng.uniform(reach, n - reach), rng.uniform(reach, n - reach)};
  return generate_probe(spec, radius, rotation);
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

const char* to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::two_category_shapes: return "two_category_shapes";
    case DatasetKind::blobs: return "blobs";
    case DatasetKind::arcs_vs_corners: return "arcs_vs_corners";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& name) {
  for (auto k : {DatasetKind::two_category_shapes, DatasetKind::blobs, DatasetKind::arcs_vs_corners}) {
    if (name == to_string(k)) return k;
  }
  throw ValidationError("unknown dataset kind '" + name +
                        "' (expected two_category_shapes, blobs or arcs_vs_corners)");
}

std::vector<Tensor> Dataset::class_images(std::size_t label) const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] == label) out.push_back(images[i]);
  }
  return out;
}

Dataset generate_dataset(const SyntheticDatasetSpec& spec) {
  if (spec.image_size < 8) throw ValidationError("synthetic images must be at least 8x8");
  if (spec.samples_per_class == 0) throw ValidationError("samples_per_class must be positive");
  Dataset d;
  d.spec = spec;
  switch (spec.kind) {
    case DatasetKind::two_category_shapes: d.class_names = {"ring", "cross"}; break;
    case DatasetKind::blobs: d.class_names = {"left", "right"}; break;
    case DatasetKind::arcs_vs_corners: d.class_names = {"arc", "corner"}; break;
  }
  Sampler rng(spec.seed);
  for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
    for (std::size_t label = 0; label < 2; ++label) {
      Tensor img;
      switch (spec.kind) {
        case DatasetKind::two_category_shapes:
          img = label == 0 ? ring(rng, spec.image_size) : cross(rng, spec.image_size);
          break;
        case DatasetKind::blobs: img = blob(rng, spec.image_size, label == 1); break;
        case DatasetKind::arcs_vs_corners:
          img = arc_or_corner(rng, spec.image_size, label == 0 ? ProbeKind::arc : ProbeKind::corner);
          break;
      }
      if (spec.texture > 0 && spec.kind != DatasetKind::blobs) add_texture(rng, img, spec.texture);
      if (spec.noise > 0) {
        for (double& v : img.values()) v += spec.noise * rng.normal();
      }
      d.images.push_back(std::move(img));
      d.labels.push_back(label);
    }
  }
  return d;
}

std::string serialize_dataset(const Dataset& data) {
  if (data.images.size() != data.labels.size()) throw ValidationError("dataset images and labels differ in count");
  nlohmann::json header{
      {"format", "CFDATA01"},
      {"version", 1},
      {"kind", to_string(data.spec.kind)},
      {"image_size", data.spec.image_size},
      {"samples_per_class", data.spec.samples_per_class},
      {"seed", data.spec.seed},
      {"noise", data.spec.noise},
      {"texture", data.spec.texture},
      {"classes", data.class_names},
      {"count", data.images.size()},
      {"shape", data.images.empty() ? std::vector<std::size_t>{} : data.images.front().shape().dims()},
  };
  const std::string text = header.dump();
  std::string out(kMagic, kMagicSize);
  put_u64(out, text.size());
  out += text;
  for (const Tensor& img : data.images) {
    if (img.shape() != data.images.front().shape()) throw ShapeError("image", "dataset images differ in shape");
    for (double v : img.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  for (std::size_t label : data.labels) {
    const auto v = static_cast<std::uint32_t>(label);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  return out;
}

Dataset deserialize_dataset(const std::string& bytes) {
  if (bytes.size() < kMagicSize + 8 || bytes.compare(0, kMagicSize, kMagic) != 0) {
    throw FormatError("not a CFDATA01 dataset archive");
  }
  const std::uint64_t len = get_u64(bytes, kMagicSize);
  if (len > bytes.size() - kMagicSize - 8) throw TruncatedError("dataset header is truncated");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(kMagicSize + 8, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset header is not valid JSON: ") + e.what());
  }
  try {
    if (h.at("version").get<int>() != 1) throw VersionError("unsupported dataset version");
    Dataset d;
    d.spec.kind = dataset_kind_from_string(h.at("kind").get<std::string>());
    d.spec.image_size = h.at("image_size").get<std::size_t>();
    d.spec.samples_per_class = h.at("samples_per_class").get<std::size_t>();
    d.spec.seed = h.at("seed").get<std::uint64_t>();
    d.spec.noise = h.at("noise").get<double>();
    d.spec.texture = h.at("texture").get<double>();
    d.class_names = h.at("classes").get<std::vector<std::string>>();
    const auto count = h.at("count").get<std::size_t>();
    const auto dims = h.at("shape").get<std::vector<std::size_t>>();
    const Shape shape(dims);
    const std::size_t per = count == 0 ? 0 : shape.elements();
    std::size_t at = kMagicSize + 8 + len;
    const std::size_t need = at + count * per * 8 + count * 4;
    if (bytes.size() < need) throw TruncatedError("dataset payload is truncated");
    if (bytes.size() > need) throw FormatError("trailing bytes after dataset payload");
    for (std::size_t n = 0; n < count; ++n) {
      std::vector<double> px(per);
      for (double& v : px) {
        v = std::bit_cast<double>(get_u64(bytes, at));
        at += 8;
      }
      d.images.emplace_back(shape, std::move(px));
    }
    for (std::size_t n = 0; n < count; ++n) {
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
      at += 4;
      d.labels.push_back(v);
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset header: ") + e.what());
  }
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  const std::string bytes = serialize_dataset(data);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed to write '" + path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_dataset(ss.str());
}

std::vector<Tensor> load_images(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) throw IoError("image path '" + path.string() + "' does not exist");
  if (!std::filesystem::is_directory(path, ec)) return load_dataset(path).images;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".cfdata") files.push_back(entry.path());
  }
  if (files.empty()) throw IoError("no .cfdata archives in '" + path.string() + "'");
  std::sort(files.begin(), files.end());
  std::vector<Tensor> images;
  for (const auto& f : files) {
    auto part = load_dataset(f).images;
    images.insert(images.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return images;
}

}  // namespace circuits

#include "gapnet/dataio.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "gapnet/check.h"

namespace fs = std::filesystem;

namespace gapnet {

namespace {

constexpr float kFloMagic = 202021.25f;

bool is_pnm_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ".pgm" || e == ".ppm" || e == ".pnm";
}

bool is_flo_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ".flo";
}

int read_pnm_token(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments, then reads one decimal token.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) throw IoError(fmt::format("{}: malformed header", path));
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    if (value > 1 << 26) throw IoError(fmt::format("{}: header value out of range", path));
    c = in.get();
  }
  if (c != EOF) in.unget();  // leave the terminator for the caller
  return value;
}

struct LerpAxis {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

LerpAxis make_axis(int in, int out) {
  LerpAxis ax;
  ax.lo.resize(static_cast<size_t>(out));
  ax.hi.resize(static_cast<size_t>(out));
  ax.frac.resize(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
    const int lo = std::min(static_cast<int>(std::floor(src)), in - 1);
    ax.lo[static_cast<size_t>(d)] = lo;
    ax.hi[static_cast<size_t>(d)] = std::min(lo + 1, in - 1);
    ax.frac[static_cast<size_t>(d)] = src - static_cast<double>(lo);
  }
  return ax;
}

template <typename Fn>
void for_each_sorted_file(const fs::path& dir, bool (*accept)(const fs::path&), Fn&& fn) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && accept(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  for (const auto& p : files) fn(p);
}

}  // namespace

PnmImage read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("{}: cannot open", path));
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6')) {
    throw IoError(fmt::format("{}: not a binary PGM/PPM file", path));
  }
  PnmImage img;
  img.channels = kind == '5' ? 1 : 3;
  img.width = read_pnm_token(in, path);
  img.height = read_pnm_token(in, path);
  const int maxval = read_pnm_token(in, path);
  if (img.width <= 0 || img.height <= 0) throw IoError(fmt::format("{}: empty image", path));
  if (maxval <= 0 || maxval > 255) throw IoError(fmt::format("{}: only 8-bit images supported", path));
  in.get();  // the single whitespace after maxval
  const size_t expected = static_cast<size_t>(img.width) * img.height * img.channels;
  img.pixels.resize(expected);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(expected));
  if (static_cast<size_t>(in.gcount()) != expected) {
    throw IoError(fmt::format("{}: truncated pixel data, expected {} bytes, got {}", path, expected,
                              in.gcount()));
  }
  return img;
}

void write_pnm(const std::string& path, const PnmImage& image) {
  GAPNET_REQUIRE(image.channels == 1 || image.channels == 3, "pnm channels must be 1 or 3");
  GAPNET_REQUIRE(image.pixels.size() ==
                     static_cast<size_t>(image.width) * image.height * image.channels,
                 "pnm pixel buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("{}: cannot write", path));
  out << (image.channels == 1 ? "P5" : "P6") << "\n"
      << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError(fmt::format("{}: write failed", path));
}

void write_gray_pnm(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels) {
  PnmImage img;
  img.width = width;
  img.height = height;
  img.channels = 1;
  img.pixels = pixels;
  write_pnm(path, img);
}

std::vector<double> resize_bilinear_plane(const std::vector<double>& src, int width, int height,
                                          int out_width, int out_height) {
  GAPNET_REQUIRE(width > 0 && height > 0 && out_width > 0 && out_height > 0, "zero extent in resize");
  GAPNET_REQUIRE(src.size() == static_cast<size_t>(width) * height, "resize source size mismatch");
  const LerpAxis ay = make_axis(height, out_height);
  const LerpAxis ax = make_axis(width, out_width);
  std::vector<double> out(static_cast<size_t>(out_width) * out_height);
  for (int y = 0; y < out_height; ++y) {
    const double* row_lo = src.data() + static_cast<int64_t>(ay.lo[static_cast<size_t>(y)]) * width;
    const double* row_hi = src.data() + static_cast<int64_t>(ay.hi[static_cast<size_t>(y)]) * width;
    const double fy = ay.frac[static_cast<size_t>(y)];
    double* orow = out.data() + static_cast<int64_t>(y) * out_width;
    for (int x = 0; x < out_width; ++x) {
      const int xl = ax.lo[static_cast<size_t>(x)];
      const int xh = ax.hi[static_cast<size_t>(x)];
      const double fx = ax.frac[static_cast<size_t>(x)];
      const double top = row_lo[xl] + fx * (row_lo[xh] - row_lo[xl]);
      const double bot = row_hi[xl] + fx * (row_hi[xh] - row_hi[xl]);
      orow[x] = top + fy * (bot - top);
    }
  }
  return out;
}

Tensor<float> load_image(const std::string& path, int target_height, int target_width,
                         const ImageNormalization& norm) {
  const PnmImage img = read_pnm(path);
  Tensor<float> out({1, 3, target_height, target_width});
  const int64_t plane = static_cast<int64_t>(target_height) * target_width;
  std::vector<double> channel(static_cast<size_t>(img.width) * img.height);
  for (int c = 0; c < 3; ++c) {
    const int src_c = img.channels == 1 ? 0 : c;
    for (int64_t i = 0; i < static_cast<int64_t>(channel.size()); ++i) {
      channel[static_cast<size_t>(i)] =
          img.pixels[static_cast<size_t>(i) * img.channels + src_c] / 255.0;
    }
    const auto resized = resize_bilinear_plane(channel, img.width, img.height, target_width, target_height);
    for (int64_t i = 0; i < plane; ++i) {
      out.data[static_cast<size_t>(c * plane + i)] =
          static_cast<float>((resized[static_cast<size_t>(i)] - norm.mean[static_cast<size_t>(c)]) /
                             norm.stddev[static_cast<size_t>(c)]);
    }
  }
  return out;
}

BinaryMask load_mask(const std::string& path, int threshold) {
  const PnmImage img = read_pnm(path);
  BinaryMask mask(img.width, img.height);
  for (int64_t i = 0; i < mask.numel(); ++i) {
    uint8_t v = img.pixels[static_cast<size_t>(i) * img.channels];
    for (int c = 1; c < img.channels; ++c) {
      if (img.pixels[static_cast<size_t>(i) * img.channels + c] != v) {
        throw IoError(fmt::format("{}: multi-channel mask with disagreeing channels", path));
      }
    }
    mask.bits[static_cast<size_t>(i)] = v >= threshold ? 1 : 0;
  }
  return mask;
}

std::vector<double> load_gray01(const std::string& path, int& width, int& height) {
  const PnmImage img = read_pnm(path);
  width = img.width;
  height = img.height;
  std::vector<double> out(static_cast<size_t>(width) * height);
  for (int64_t i = 0; i < static_cast<int64_t>(out.size()); ++i) {
    uint8_t v = img.pixels[static_cast<size_t>(i) * img.channels];
    for (int c = 1; c < img.channels; ++c) {
      if (img.pixels[static_cast<size_t>(i) * img.channels + c] != v) {
        throw IoError(fmt::format("{}: multi-channel map with disagreeing channels", path));
      }
    }
    out[static_cast<size_t>(i)] = v / 255.0;
  }
  return out;
}

FlowField read_flo(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("{}: cannot open", path));
  float magic = 0.0f;
  in.read(reinterpret_cast<char*>(&magic), 4);
  if (in.gcount() != 4 || magic != kFloMagic) {
    throw IoError(fmt::format("{}: bad .flo magic (expected 202021.25)", path));
  }
  int32_t w = 0, h = 0;
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  if (!in || w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20)) {
    throw IoError(fmt::format("{}: bad .flo dimensions {}x{}", path, w, h));
  }
  FlowField flow;
  flow.width = w;
  flow.height = h;
  const size_t count = static_cast<size_t>(w) * h * 2;
  flow.uv.resize(count);
  in.read(reinterpret_cast<char*>(flow.uv.data()), static_cast<std::streamsize>(count * 4));
  if (static_cast<size_t>(in.gcount()) != count * 4) {
    throw IoError(fmt::format("{}: truncated .flo payload, expected {} bytes, got {}", path,
                              count * 4, in.gcount()));
  }
  return flow;
}

void write_flo(const std::string& path, const FlowField& flow) {
  GAPNET_REQUIRE(flow.uv.size() == static_cast<size_t>(flow.width) * flow.height * 2,
                 "flow buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("{}: cannot write", path));
  const float magic = kFloMagic;
  const int32_t w = flow.width, h = flow.height;
  out.write(reinterpret_cast<const char*>(&magic), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(flow.uv.data()),
            static_cast<std::streamsize>(flow.uv.size() * 4));
  if (!out) throw IoError(fmt::format("{}: write failed", path));
}

Tensor<float> flow_to_image(const FlowField& flow, const ImageNormalization& norm) {
  const int64_t plane = static_cast<int64_t>(flow.width) * flow.height;
  Tensor<float> out({1, 3, flow.height, flow.width});
  std::vector<double> channel(static_cast<size_t>(plane));
  for (int c = 0; c < 3; ++c) {
    for (int64_t i = 0; i < plane; ++i) {
      const double u = flow.uv[static_cast<size_t>(i) * 2];
      const double v = flow.uv[static_cast<size_t>(i) * 2 + 1];
      channel[static_cast<size_t>(i)] = c == 0 ? u : (c == 1 ? v : std::sqrt(u * u + v * v));
    }
    double lo = channel[0], hi = channel[0];
    for (double v : channel) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (int64_t i = 0; i < plane; ++i) {
      const double scaled = hi > lo ? (channel[static_cast<size_t>(i)] - lo) / (hi - lo) : 0.0;
      out.data[static_cast<size_t>(c * plane + i)] = static_cast<float>(
          (scaled - norm.mean[static_cast<size_t>(c)]) / norm.stddev[static_cast<size_t>(c)]);
    }
  }
  return out;
}

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void checkpoint_write(const std::string& path,
                      const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors) {
  std::set<std::string> seen;
  for (const auto& [name, tensor] : tensors) {
    GAPNET_REQUIRE(seen.insert(name).second, "duplicate tensor name '{}' in checkpoint", name);
    GAPNET_REQUIRE(tensor != nullptr && tensor->rank() >= 1, "null or rank-0 tensor '{}'", name);
    GAPNET_REQUIRE(name.size() <= 0xffff, "tensor name too long");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("{}: cannot write", path));
  out.write("GAPN", 4);
  const uint32_t version = 1;
  const uint32_t count = static_cast<uint32_t>(tensors.size());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& [name, tensor] : tensors) {
    const uint16_t name_len = static_cast<uint16_t>(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 2);
    out.write(name.data(), name_len);
    const uint8_t rank = static_cast<uint8_t>(tensor->rank());
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (int e : tensor->shape) {
      const uint32_t extent = static_cast<uint32_t>(e);
      out.write(reinterpret_cast<const char*>(&extent), 4);
    }
    const uint8_t dtype = 0;  // 32-bit IEEE-754 little-endian
    out.write(reinterpret_cast<const char*>(&dtype), 1);
    out.write(reinterpret_cast<const char*>(tensor->data.data()),
              static_cast<std::streamsize>(tensor->data.size() * 4));
  }
  if (!out) throw IoError(fmt::format("{}: write failed", path));
}

Checkpoint checkpoint_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("{}: cannot open", path));
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "GAPN", 4) != 0) {
    throw IoError(fmt::format("{}: not a checkpoint file", path));
  }
  Checkpoint ckpt;
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&ckpt.version), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in) throw IoError(fmt::format("{}: truncated header", path));
  if (ckpt.version != 1) {
    throw IoError(fmt::format("{}: unsupported checkpoint version {} (expected 1)", path, ckpt.version));
  }
  std::set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 2);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint8_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 1);
    if (!in) throw IoError(fmt::format("{}: truncated tensor header", path));
    Shape shape(rank);
    for (int d = 0; d < rank; ++d) {
      uint32_t extent = 0;
      in.read(reinterpret_cast<char*>(&extent), 4);
      if (!in || extent == 0 || extent > (1u << 28)) {
        throw IoError(fmt::format("{}: bad extent in tensor '{}'", path, name));
      }
      shape[static_cast<size_t>(d)] = static_cast<int>(extent);
    }
    uint8_t dtype = 0xff;
    in.read(reinterpret_cast<char*>(&dtype), 1);
    if (!in || dtype != 0) throw IoError(fmt::format("{}: unknown dtype in tensor '{}'", path, name));
    if (!seen.insert(name).second) {
      throw IoError(fmt::format("{}: duplicate tensor name '{}'", path, name));
    }
    Tensor<float> tensor(shape);
    const std::streamsize bytes = static_cast<std::streamsize>(tensor.data.size() * 4);
    in.read(reinterpret_cast<char*>(tensor.data.data()), bytes);
    if (in.gcount() != bytes) {
      throw IoError(fmt::format("{}: truncated values for tensor '{}', expected {} bytes, got {}",
                                path, name, bytes, in.gcount()));
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(tensor));
  }
  return ckpt;
}

DatasetScan scan_dataset(const std::string& root, DatasetMode mode) {
  DatasetScan scan;
  const fs::path base(root);
  if (!fs::is_directory(base)) throw IoError(fmt::format("{}: not a directory", root));

  auto stem_map = [](const fs::path& dir, bool (*accept)(const fs::path&)) {
    std::map<std::string, std::string> out;
    for_each_sorted_file(dir, accept, [&](const fs::path& p) { out[p.stem().string()] = p.string(); });
    return out;
  };

  if (mode == DatasetMode::kImage) {
    const fs::path images = base / "images";
    const fs::path masks = base / "masks";
    if (!fs::is_directory(images) || !fs::is_directory(masks)) {
      throw IoError(fmt::format("{}: expected images/ and masks/ subdirectories", root));
    }
    const auto image_stems = stem_map(images, is_pnm_ext);
    const auto mask_stems = stem_map(masks, is_pnm_ext);
    for (const auto& [stem, path] : image_stems) {
      const auto it = mask_stems.find(stem);
      if (it == mask_stems.end()) {
        scan.warnings.push_back(fmt::format("image without mask: {}", path));
        continue;
      }
      SampleRecord rec;
      rec.stem = stem;
      rec.image_path = path;
      rec.mask_path = it->second;
      scan.records.push_back(std::move(rec));
    }
    for (const auto& [stem, path] : mask_stems) {
      if (!image_stems.count(stem)) scan.warnings.push_back(fmt::format("mask without image: {}", path));
    }
  } else {
    const fs::path clips = base / "clips";
    if (!fs::is_directory(clips)) throw IoError(fmt::format("{}: expected clips/ subdirectory", root));
    std::vector<fs::path> clip_dirs;
    for (const auto& entry : fs::directory_iterator(clips)) {
      if (entry.is_directory()) clip_dirs.push_back(entry.path());
    }
    std::sort(clip_dirs.begin(), clip_dirs.end());
    for (const auto& clip : clip_dirs) {
      if (!fs::is_directory(clip / "frames")) {
        scan.warnings.push_back(fmt::format("clip without frames/: {}", clip.string()));
        continue;
      }
      const auto frames = stem_map(clip / "frames", is_pnm_ext);
      const auto flows = fs::is_directory(clip / "flow")
                             ? stem_map(clip / "flow", is_flo_ext)
                             : std::map<std::string, std::string>{};
      const auto masks = fs::is_directory(clip / "masks")
                             ? stem_map(clip / "masks", is_pnm_ext)
                             : std::map<std::string, std::string>{};
      int index = 0;
      for (const auto& [stem, path] : frames) {
        const int frame_index = index++;
        const auto flow_it = flows.find(stem);
        if (flow_it == flows.end()) continue;  // flowless frames carry no record
        const auto mask_it = masks.find(stem);
        if (mask_it == masks.end()) {
          scan.warnings.push_back(fmt::format("frame without mask: {}", path));
          continue;
        }
        SampleRecord rec;
        rec.stem = stem;
        rec.image_path = path;
        rec.mask_path = mask_it->second;
        rec.flow_path = flow_it->second;
        rec.clip_id = clip.filename().string();
        rec.frame_index = frame_index;
        scan.records.push_back(std::move(rec));
      }
      for (const auto& [stem, path] : flows) {
        if (!frames.count(stem)) scan.warnings.push_back(fmt::format("flow without frame: {}", path));
      }
    }
  }
  if (scan.records.empty()) throw std::invalid_argument(fmt::format("{}: empty dataset", root));
  return scan;
}

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(fmt::format("config key '{}': unparsable value '{}'", key, value));
  }
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(fmt::format("config key '{}': unparsable value '{}'", key, value));
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(fmt::format("config key '{}': unparsable value '{}'", key, value));
  }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) {
      throw std::invalid_argument(fmt::format("config key '{}': unparsable value '{}'", key, value));
    }
    out.push_back(parse_int(key, item));
  }
  if (out.empty()) {
    throw std::invalid_argument(fmt::format("config key '{}': unparsable value '{}'", key, value));
  }
  return out;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream stream(text);
  std::string line;
  while (std::getline(stream, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(fmt::format("config line without '=': '{}'", line));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::invalid_argument(fmt::format("config line with empty key or value: '{}'", line));
    }

    if (key == "preset") {
      if (value != "paper" && value != "toy") {
        throw std::invalid_argument(fmt::format("config key 'preset': expected paper|toy, got '{}'", value));
      }
      cfg.preset = value;
    } else if (key == "width_multiplier") {
      cfg.width_multiplier = parse_double(key, value);
      if (cfg.width_multiplier <= 0) throw std::invalid_argument("config key 'width_multiplier': must be positive");
    } else if (key == "csa_dim") {
      cfg.csa_dim = parse_int(key, value);
    } else if (key == "csa_heads") {
      cfg.csa_heads = parse_int(key, value);
    } else if (key == "csa_ffn_expansion") {
      cfg.csa_ffn_expansion = parse_int(key, value);
    } else if (key == "gpc_m") {
      cfg.gpc_m = parse_int(key, value);
      if (cfg.gpc_m < 0) throw std::invalid_argument("config key 'gpc_m': must be >= 0");
    } else if (key == "gpc_atrous_rates") {
      const auto rates = parse_int_list(key, value);
      if (rates.size() != 4) {
        throw std::invalid_argument(fmt::format("config key 'gpc_atrous_rates': expected 4 values, got {}", rates.size()));
      }
      std::copy(rates.begin(), rates.end(), cfg.gpc_atrous_rates.begin());
    } else if (key == "reduce_channels") {
      const auto widths = parse_int_list(key, value);
      if (widths.size() != 4) {
        throw std::invalid_argument(fmt::format("config key 'reduce_channels': expected 4 values, got {}", widths.size()));
      }
      std::copy(widths.begin(), widths.end(), cfg.reduce_channels.begin());
    } else if (key == "supervision_setting") {
      if (value.size() != 1 || value[0] < 'a' || value[0] > 'f') {
        throw std::invalid_argument(fmt::format("config key 'supervision_setting': expected a..f, got '{}'", value));
      }
      cfg.supervision_setting = value[0];
    } else if (key == "lr") {
      cfg.lr = parse_double(key, value);
    } else if (key == "lr_power") {
      cfg.lr_power = parse_double(key, value);
    } else if (key == "epochs") {
      cfg.epochs = parse_int(key, value);
    } else if (key == "batch_size") {
      cfg.batch_size = parse_int(key, value);
    } else if (key == "weight_decay") {
      cfg.weight_decay = parse_double(key, value);
    } else if (key == "adam_beta1") {
      cfg.adam_beta1 = parse_double(key, value);
    } else if (key == "adam_beta2") {
      cfg.adam_beta2 = parse_double(key, value);
    } else if (key == "seed") {
      cfg.seed = parse_u64(key, value);
    } else if (key == "train_sizes") {
      cfg.train_sizes = parse_int_list(key, value);
    } else if (key == "infer_size") {
      cfg.infer_size = parse_int(key, value);
    } else if (key == "mode") {
      if (value != "image" && value != "video") {
        throw std::invalid_argument(fmt::format("config key 'mode': expected image|video, got '{}'", value));
      }
      cfg.mode = value;
    } else if (key == "wf_beta2") {
      cfg.wf_beta2 = parse_double(key, value);
    } else {
      throw std::invalid_argument(fmt::format("unknown config key '{}'", key));
    }
  }
  return cfg;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("{}: cannot open", path));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

std::string config_to_text(const RunConfig& c) {
  auto join = [](const auto& values) {
    std::string out;
    for (size_t i = 0; i < values.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(values[i]);
    }
    return out;
  };
  std::string out;
  out += fmt::format("preset = {}\n", c.preset);
  out += fmt::format("width_multiplier = {:g}\n", c.width_multiplier);
  out += fmt::format("csa_dim = {}\n", c.csa_dim);
  out += fmt::format("csa_heads = {}\n", c.csa_heads);
  out += fmt::format("csa_ffn_expansion = {}\n", c.csa_ffn_expansion);
  out += fmt::format("gpc_m = {}\n", c.gpc_m);
  out += fmt::format("gpc_atrous_rates = {}\n", join(c.gpc_atrous_rates));
  out += fmt::format("reduce_channels = {}\n", join(c.reduce_channels));
  out += fmt::format("supervision_setting = {}\n", c.supervision_setting);
  out += fmt::format("lr = {:g}\n", c.lr);
  out += fmt::format("lr_power = {:g}\n", c.lr_power);
  out += fmt::format("epochs = {}\n", c.epochs);
  out += fmt::format("batch_size = {}\n", c.batch_size);
  out += fmt::format("weight_decay = {:g}\n", c.weight_decay);
  out += fmt::format("adam_beta1 = {:g}\n", c.adam_beta1);
  out += fmt::format("adam_beta2 = {:g}\n", c.adam_beta2);
  out += fmt::format("seed = {}\n", c.seed);
  out += fmt::format("train_sizes = {}\n", join(c.train_sizes));
  out += fmt::format("infer_size = {}\n", c.infer_size);
  out += fmt::format("mode = {}\n", c.mode);
  out += fmt::format("wf_beta2 = {:g}\n", c.wf_beta2);
  return out;
}

}  // namespace gapnet

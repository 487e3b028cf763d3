#include "gapnet/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "gapnet/check.h"

namespace fs = std::filesystem;

namespace gapnet {

namespace {

BinaryMask resize_mask_nearest(const BinaryMask& mask, int out_h, int out_w) {
  if (mask.height == out_h && mask.width == out_w) return mask;
  BinaryMask out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(mask.height - 1,
                            static_cast<int>((y + 0.5) * mask.height / out_h));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(mask.width - 1,
                              static_cast<int>((x + 0.5) * mask.width / out_w));
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

void flip_image_inplace(Tensor<float>& image) {
  const int c = image.shape[1], h = image.shape[2], w = image.shape[3];
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      float* row = image.data.data() + (static_cast<int64_t>(ch) * h + y) * w;
      std::reverse(row, row + w);
    }
  }
}

void flip_mask_inplace(BinaryMask& mask) {
  for (int y = 0; y < mask.height; ++y) {
    uint8_t* row = mask.bits.data() + static_cast<int64_t>(y) * mask.width;
    std::reverse(row, row + mask.width);
  }
}

Tensor<float> resize_image_tensor(const Tensor<float>& image, int out_h, int out_w) {
  const int c = image.shape[1], h = image.shape[2], w = image.shape[3];
  if (h == out_h && w == out_w) return image;
  Tensor<float> out({1, c, out_h, out_w});
  std::vector<double> plane(static_cast<size_t>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    const float* src = image.data.data() + static_cast<int64_t>(ch) * h * w;
    for (size_t i = 0; i < plane.size(); ++i) plane[i] = src[i];
    const auto resized = resize_bilinear_plane(plane, w, h, out_w, out_h);
    float* dst = out.data.data() + static_cast<int64_t>(ch) * out_h * out_w;
    for (size_t i = 0; i < resized.size(); ++i) dst[i] = static_cast<float>(resized[i]);
  }
  return out;
}

// Copies checkpoint values into the model, mapping single-stream names onto
// the RGB stream (and back) so image checkpoints can seed video models.
void assign_checkpoint(GapNet<float>& model, const Checkpoint& ckpt, bool allow_partial) {
  auto params = model.parameters();
  auto st = model.state();
  params.insert(params.end(), st.begin(), st.end());
  for (auto& p : params) {
    const Tensor<float>* src = ckpt.find(p.name);
    if (!src && p.name.rfind("backbone_rgb.", 0) == 0) {
      src = ckpt.find("backbone." + p.name.substr(13));
    }
    if (!src && p.name.rfind("backbone.", 0) == 0) {
      src = ckpt.find("backbone_rgb." + p.name.substr(9));
    }
    if (!src) {
      const bool optional = allow_partial && (p.name.rfind("fusion.", 0) == 0 ||
                                              p.name.rfind("backbone_flow.", 0) == 0);
      GAPNET_REQUIRE(optional, "checkpoint is missing tensor '{}'", p.name);
      continue;
    }
    GAPNET_REQUIRE(src->shape == p.tensor->shape, "checkpoint tensor '{}' has shape {}, model expects {}",
                   p.name, shape_str(src->shape), shape_str(p.tensor->shape));
    p.tensor->data = src->data;
  }
}

}  // namespace

template <typename T>
AdamOptimizer<T>::AdamOptimizer(ParamList<T> params, const AdamConfig& config)
    : params_(std::move(params)), cfg_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.tensor->numel()), T(0));
    v_.emplace_back(static_cast<size_t>(p.tensor->numel()), T(0));
  }
}

template <typename T>
void AdamOptimizer<T>::step(Tape<T>& tape, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& param = *params_[i].tensor;
    const auto grad = tape.grad_of(param);
    GAPNET_REQUIRE(grad.size() == param.data.size(), "gradient shape mismatch for '{}'",
                   params_[i].name);
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < grad.size(); ++k) {
      const double g = static_cast<double>(grad[k]);
      m[k] = static_cast<T>(cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g);
      v[k] = static_cast<T>(cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g);
      const double mhat = static_cast<double>(m[k]) / bc1;
      const double vhat = static_cast<double>(v[k]) / bc2;
      const double update = lr * mhat / (std::sqrt(vhat) + cfg_.eps) +
                            lr * cfg_.weight_decay * static_cast<double>(param.data[k]);
      param.data[k] = static_cast<T>(param.data[k] - update);
    }
  }
}

double poly_lr(int64_t iter, int64_t max_iter, double base, double power) {
  GAPNET_REQUIRE(max_iter > 0, "poly_lr needs max_iter > 0");
  GAPNET_REQUIRE(iter >= 0 && iter <= max_iter, "iteration {} outside [0, {}]", iter, max_iter);
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

std::string RunManifest::to_text() const {
  std::string out = fmt::format("seed = {}\nsteps = {}\n", seed, step_losses.size());
  for (size_t i = 0; i < step_losses.size(); ++i) {
    out += fmt::format("step_loss {} = {:.17g}\n", i, step_losses[i]);
  }
  for (size_t i = 0; i < epoch_seconds.size(); ++i) {
    out += fmt::format("epoch_seconds {} = {:.3f}\n", i, epoch_seconds[i]);
  }
  out += "--- config ---\n" + config_snapshot;
  return out;
}

TrainResult train(const std::string& dataset_root, const RunConfig& config,
                  const std::string& out_dir, const TrainOptions& options) {
  GAPNET_REQUIRE(config.epochs >= 1 && config.batch_size >= 1, "epochs and batch size must be >= 1");
  GAPNET_REQUIRE(!config.train_sizes.empty(), "no training sizes configured");
  for (int s : config.train_sizes) {
    GAPNET_REQUIRE(s > 0 && s % 32 == 0, "training size {} must be divisible by 32", s);
  }
  const bool video = config.mode == "video";
  const auto scan = scan_dataset(dataset_root, video ? DatasetMode::kVideo : DatasetMode::kImage);
  fs::create_directories(out_dir);

  GapNet<float> model(ModelConfig::from_run_config(config), config.seed);
  double base_lr = config.lr;
  if (!options.init_checkpoint.empty()) {
    assign_checkpoint(model, checkpoint_read(options.init_checkpoint), /*allow_partial=*/true);
    if (video) base_lr *= 0.1;  // fine-tuning from an image checkpoint
  }

  AdamConfig adam_cfg;
  adam_cfg.beta1 = config.adam_beta1;
  adam_cfg.beta2 = config.adam_beta2;
  adam_cfg.weight_decay = config.weight_decay;
  AdamOptimizer<float> adam(model.parameters(), adam_cfg);

  // Target kinds the active supervision setting consumes.
  std::set<TargetKind> needed;
  for (const auto& [name, kind] : supervision_pairs(config.supervision_setting)) needed.insert(kind);

  Rng rng(config.seed);
  const int64_t steps_per_epoch =
      (static_cast<int64_t>(scan.records.size()) + config.batch_size - 1) / config.batch_size;
  int64_t max_iter = static_cast<int64_t>(config.epochs) * steps_per_epoch;
  if (options.max_steps > 0) max_iter = std::min<int64_t>(max_iter, options.max_steps);

  RunManifest manifest;
  manifest.seed = config.seed;
  manifest.config_snapshot = config_to_text(config);

  std::vector<size_t> order(scan.records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  int64_t iter = 0;
  TrainResult result;
  for (int epoch = 0; epoch < config.epochs && iter < max_iter; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    // Seeded Fisher-Yates shuffle.
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    for (size_t batch_start = 0; batch_start < order.size() && iter < max_iter;
         batch_start += static_cast<size_t>(config.batch_size)) {
      const size_t batch_end =
          std::min(order.size(), batch_start + static_cast<size_t>(config.batch_size));
      const int bsz = static_cast<int>(batch_end - batch_start);
      const int size = config.train_sizes[rng.below(config.train_sizes.size())];

      Tensor<float> images({bsz, 3, size, size});
      Tensor<float> flows;
      if (video) flows = Tensor<float>({bsz, 3, size, size});
      std::vector<TriRegionLabel> labels(static_cast<size_t>(bsz));
      for (int b = 0; b < bsz; ++b) {
        const auto& rec = scan.records[order[batch_start + static_cast<size_t>(b)]];
        Tensor<float> img = load_image(rec.image_path, size, size);
        BinaryMask mask = resize_mask_nearest(load_mask(rec.mask_path), size, size);
        Tensor<float> flow_img;
        if (video) {
          flow_img = resize_image_tensor(flow_to_image(read_flo(rec.flow_path)), size, size);
        }
        if (options.flip_augment && rng.uniform() < 0.5) {
          flip_image_inplace(img);
          flip_mask_inplace(mask);
          if (video) flip_image_inplace(flow_img);
        }
        std::copy(img.data.begin(), img.data.end(),
                  images.data.begin() + static_cast<int64_t>(b) * img.numel());
        if (video) {
          std::copy(flow_img.data.begin(), flow_img.data.end(),
                    flows.data.begin() + static_cast<int64_t>(b) * flow_img.numel());
        }
        labels[static_cast<size_t>(b)] = decompose(mask);
      }

      TargetMaps<float> targets;
      std::vector<const TriRegionLabel*> label_ptrs;
      for (const auto& l : labels) label_ptrs.push_back(&l);
      for (TargetKind kind : needed) targets[kind] = targets_to_tensor<float>(label_ptrs, kind);

      Tape<float> tape;
      auto params = adam.params();
      for (auto& p : params) tape.watch(*p.tensor);
      Context<float> ctx;
      ctx.tape = &tape;
      ctx.training = true;
      auto outputs = video ? model.forward_video(images, flows, ctx)
                           : model.forward_image(images, ctx);
      auto loss = overall_loss(outputs, targets, config.supervision_setting, ctx);
      tape.backward(loss.value);

      const double lr = poly_lr(iter, max_iter, base_lr, config.lr_power);
      adam.step(tape, lr);
      manifest.step_losses.push_back(loss.report.overall);
      ++iter;
      if (options.verbose) {
        fmt::print("epoch {} iter {}/{} size {} loss {:.6f} lr {:.3e}\n", epoch, iter, max_iter,
                   size, loss.report.overall, lr);
      }
    }
    const auto epoch_end = std::chrono::steady_clock::now();
    manifest.epoch_seconds.push_back(
        std::chrono::duration<double>(epoch_end - epoch_start).count());
    if (options.epoch_checkpoints) {
      model.save_checkpoint((fs::path(out_dir) / fmt::format("epoch_{:03d}.ckpt", epoch)).string());
    }
  }

  result.final_checkpoint = (fs::path(out_dir) / "final.ckpt").string();
  model.save_checkpoint(result.final_checkpoint);
  std::ofstream mf((fs::path(out_dir) / "manifest.txt").string());
  mf << manifest.to_text();
  result.manifest = manifest;
  return result;
}

void write_region_map(const std::string& path, const TriRegionLabel& label) {
  std::vector<uint8_t> pixels(label.region.size());
  for (size_t i = 0; i < label.region.size(); ++i) {
    switch (label.region[i]) {
      case Region::kBackground: pixels[i] = 0; break;
      case Region::kBoundary: pixels[i] = 85; break;
      case Region::kOthers: pixels[i] = 170; break;
      case Region::kCenter: pixels[i] = 255; break;
    }
  }
  write_gray_pnm(path, label.width, label.height, pixels);
}

InferResult infer(const std::string& checkpoint_path, const RunConfig& config,
                  const std::string& input_dir, const std::string& out_dir,
                  const InferOptions& options) {
  GAPNET_REQUIRE(options.size > 0 && options.size % 32 == 0, "inference size {} must be divisible by 32",
                 options.size);
  GAPNET_REQUIRE(fs::is_directory(input_dir), "{}: not a directory", input_dir);
  fs::create_directories(out_dir);

  // Inference always runs the single-stream path; video checkpoints map
  // their RGB stream onto it by name.
  RunConfig image_config = config;
  image_config.mode = "image";
  GapNet<float> model(ModelConfig::from_run_config(image_config), config.seed);
  assign_checkpoint(model, checkpoint_read(checkpoint_path), /*allow_partial=*/false);

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(input_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  GAPNET_REQUIRE(!files.empty(), "{}: no images found", input_dir);

  InferResult result;
  for (const auto& file : files) {
    const PnmImage raw = read_pnm(file.string());  // original extent for the back-resize
    const auto image = load_image(file.string(), options.size, options.size);
    Context<float> ctx;  // eval mode, tape-free
    const auto out = model.forward_image(image, ctx);

    auto write_map = [&](const Tensor<float>& map, const std::string& suffix) {
      std::vector<double> plane(map.data.begin(), map.data.end());
      const auto resized =
          resize_bilinear_plane(plane, options.size, options.size, raw.width, raw.height);
      std::vector<uint8_t> bytes(resized.size());
      for (size_t i = 0; i < resized.size(); ++i) {
        bytes[i] = static_cast<uint8_t>(std::lround(std::clamp(resized[i], 0.0, 1.0) * 255.0));
      }
      const std::string path =
          (fs::path(out_dir) / fmt::format("{}{}.pgm", file.stem().string(), suffix)).string();
      write_gray_pnm(path, raw.width, raw.height, bytes);
      return path;
    };

    result.written.push_back(write_map(out.p3, ""));
    if (options.emit_sides) {
      write_map(out.p1, "_p1");
      write_map(out.p2, "_p2");
    }
    if (options.emit_regions) {
      std::vector<double> plane(out.p3.data.begin(), out.p3.data.end());
      const auto resized =
          resize_bilinear_plane(plane, options.size, options.size, raw.width, raw.height);
      BinaryMask binarized(raw.width, raw.height);
      for (size_t i = 0; i < resized.size(); ++i) binarized.bits[i] = resized[i] >= 0.5 ? 1 : 0;
      write_region_map(
          (fs::path(out_dir) / fmt::format("{}_regions.pgm", file.stem().string())).string(),
          decompose(binarized));
    }
  }
  return result;
}

template class AdamOptimizer<float>;

}  // namespace gapnet

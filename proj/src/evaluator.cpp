#include "hnas/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "hnas/errors.hpp"

namespace hnas {

namespace fs = std::filesystem;

Tensor Dataset::batch(const std::vector<std::size_t>& indices, std::size_t out_channels,
                      std::size_t resolution) const {
  if (out_channels != channels && out_channels != 1 && channels != 1) {
    throw ShapeError("cannot map " + std::to_string(channels) + "-channel images to " +
                     std::to_string(out_channels) + " channels");
  }
  const std::size_t plane = resolution * resolution;
  std::vector<double> out(indices.size() * out_channels * plane);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw ContractError("dataset index out of range");
    const double* img = images.data() + indices[b] * image_size();
    for (std::size_t y = 0; y < resolution; ++y) {
      const std::size_t sy = y * height / resolution;
      for (std::size_t x = 0; x < resolution; ++x) {
        const std::size_t sx = x * width / resolution;
        const std::size_t src = sy * width + sx;
        if (out_channels == channels) {
          for (std::size_t c = 0; c < channels; ++c) {
            out[(b * out_channels + c) * plane + y * resolution + x] = img[c * height * width + src];
          }
        } else if (channels == 1) {
          for (std::size_t c = 0; c < out_channels; ++c) out[(b * out_channels + c) * plane + y * resolution + x] = img[src];
        } else {
          double acc = 0.0;
          for (std::size_t c = 0; c < channels; ++c) acc += img[c * height * width + src];
          out[b * plane + y * resolution + x] = acc / static_cast<double>(channels);
        }
      }
    }
  }
  return Tensor::from({indices.size(), out_channels, resolution, resolution}, std::move(out));
}

void split_dataset(Dataset& data, std::uint64_t seed, double validation_fraction) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ContractError("validation fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::size_t n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(order.size())));
  if (order.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, order.size() - 1);
  data.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  data.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(data.validation.begin(), data.validation.end());
  std::sort(data.train.begin(), data.train.end());
}

// ---- IDX -------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct IdxArray {
  std::vector<std::size_t> dims;
  std::size_t data_offset = 0;
};

IdxArray parse_idx_header(const std::vector<unsigned char>& bytes, const std::string& path,
                          std::initializer_list<std::size_t> allowed_ranks) {
  if (bytes.size() < 4) throw FormatError("'" + path + "': truncated IDX magic", bytes.size());
  if (bytes[0] != 0 || bytes[1] != 0) throw FormatError("'" + path + "': bad IDX magic", 0);
  if (bytes[2] != 0x08) throw FormatError("'" + path + "': only unsigned-byte IDX data is supported", 2);
  const std::size_t rank = bytes[3];
  if (std::find(allowed_ranks.begin(), allowed_ranks.end(), rank) == allowed_ranks.end()) {
    throw FormatError("'" + path + "': unexpected IDX rank " + std::to_string(rank), 3);
  }
  IdxArray a;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t at = 4 + 4 * d;
    if (bytes.size() < at + 4) throw FormatError("'" + path + "': truncated IDX dimensions", bytes.size());
    const std::size_t v = (std::size_t{bytes[at]} << 24) | (std::size_t{bytes[at + 1]} << 16) |
                          (std::size_t{bytes[at + 2]} << 8) | bytes[at + 3];
    if (v == 0 && d > 0) throw FormatError("'" + path + "': zero IDX dimension", at);
    a.dims.push_back(v);
  }
  a.data_offset = 4 + 4 * rank;
  std::size_t need = 1;
  for (auto d : a.dims) need *= d;
  if (bytes.size() < a.data_offset + need) throw FormatError("'" + path + "': truncated IDX payload", bytes.size());
  if (bytes.size() > a.data_offset + need) {
    throw FormatError("'" + path + "': trailing bytes after IDX payload", a.data_offset + need);
  }
  return a;
}

std::string default_labels_path(const std::string& images_path) {
  const fs::path p(images_path);
  std::string name = p.filename().string();
  const auto at = name.rfind("images");
  if (at == std::string::npos) {
    throw DataError("cannot derive a labels file from '" + images_path + "'; pass it explicitly");
  }
  name.replace(at, 6, "labels");
  for (const char* rank : {"idx3", "idx4"}) {
    if (const auto r = name.find(rank); r != std::string::npos) name.replace(r, 4, "idx1");
  }
  return (p.parent_path() / name).string();
}

void finish_labels(Dataset& data, const LoadOptions& options) {
  std::size_t max_label = 0;
  for (auto l : data.labels) max_label = std::max(max_label, l);
  if (options.num_classes) {
    for (std::size_t i = 0; i < data.labels.size(); ++i) {
      if (data.labels[i] >= *options.num_classes) {
        throw DataError(data.provenance + ": sample " + std::to_string(i) + " has unknown label " +
                        std::to_string(data.labels[i]));
      }
    }
    data.num_classes = *options.num_classes;
  } else {
    data.num_classes = max_label + 1;
  }
  split_dataset(data, options.seed, options.validation_fraction);
}

Dataset load_idx(const std::string& path, const LoadOptions& options) {
  const auto image_bytes = read_bytes(path);
  const auto img = parse_idx_header(image_bytes, path, {3, 4});
  const std::string labels_path = options.labels_path.empty() ? default_labels_path(path) : options.labels_path;
  const auto label_bytes = read_bytes(labels_path);
  const auto lab = parse_idx_header(label_bytes, labels_path, {1});
  if (lab.dims[0] != img.dims[0]) {
    throw FormatError("'" + labels_path + "': " + std::to_string(lab.dims[0]) + " labels for " +
                          std::to_string(img.dims[0]) + " images",
                      4);
  }
  Dataset data;
  data.provenance = path;
  const std::size_t n = img.dims[0];
  if (n == 0) throw DataError("'" + path + "' holds no images");
  data.height = img.dims[1];
  data.width = img.dims[2];
  data.channels = img.dims.size() == 4 ? img.dims[3] : 1;
  data.images.resize(n * data.image_size());
  const std::size_t hw = data.height * data.width;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t c = 0; c < data.channels; ++c) {
        const unsigned char v = image_bytes[img.data_offset + (i * hw + p) * data.channels + c];
        data.images[i * data.image_size() + c * hw + p] = static_cast<double>(v) / 255.0;
      }
  for (std::size_t i = 0; i < n; ++i) data.labels.push_back(label_bytes[lab.data_offset + i]);
  finish_labels(data, options);
  return data;
}

// ---- PGM / PPM ---------------------------------------------------------------

struct Raster {
  std::size_t channels = 1, width = 0, height = 0;
  std::vector<double> planes;  // [c x h x w]
};

Raster read_pnm(const std::string& path) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw FormatError("'" + path + "': expected " + what, start);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("'" + path + "': not a binary PGM (P5) or PPM (P6) file", 0);
  }
  Raster r;
  r.channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  r.width = read_uint("width");
  r.height = read_uint("height");
  const std::size_t maxval_at = pos;
  const std::size_t maxval = read_uint("maximum value");
  if (maxval == 0 || maxval > 255) throw FormatError("'" + path + "': only 8-bit rasters are supported", maxval_at);
  if (r.width == 0 || r.height == 0) throw FormatError("'" + path + "': empty raster", 2);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("'" + path + "': malformed header", pos);
  ++pos;
  const std::size_t hw = r.width * r.height, need = hw * r.channels;
  if (bytes.size() - pos < need) throw FormatError("'" + path + "': truncated pixel data", bytes.size());
  r.planes.resize(need);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < r.channels; ++c) {
      r.planes[c * hw + p] = static_cast<double>(bytes[pos + p * r.channels + c]) / static_cast<double>(maxval);
    }
  return r;
}

Dataset load_directory(const std::string& root, const LoadOptions& options) {
  if (!fs::is_directory(root)) throw DataError("'" + root + "' is not a directory");
  std::vector<fs::path> classes;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) {
      classes.push_back(entry.path());
    } else {
      throw DataError("'" + entry.path().string() + "' is not inside a class directory");
    }
  }
  std::sort(classes.begin(), classes.end());
  Dataset data;
  data.provenance = root;
  bool first = true;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(classes[label])) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      const auto ext = file.extension().string();
      if (ext != ".pgm" && ext != ".ppm") throw DataError("'" + file.string() + "' is not a .pgm or .ppm raster");
      Raster r = read_pnm(file.string());
      if (first) {
        data.channels = r.channels;
        data.height = r.height;
        data.width = r.width;
        first = false;
      } else if (r.channels != data.channels || r.height != data.height || r.width != data.width) {
        throw DataError("'" + file.string() + "' differs in size or channel count from earlier images");
      }
      data.images.insert(data.images.end(), r.planes.begin(), r.planes.end());
      data.labels.push_back(label);
    }
  }
  if (data.labels.empty()) throw DataError("'" + root + "' contains no images");
  finish_labels(data, options);
  if (!options.num_classes) data.num_classes = classes.size();
  return data;
}

}  // namespace

DatasetFormat parse_dataset_format(std::string_view name) {
  if (name == "idx") return DatasetFormat::idx;
  if (name == "dir" || name == "labeled-directory") return DatasetFormat::labeled_directory;
  throw ContractError("unknown dataset format '" + std::string(name) + "' (use idx or dir)");
}

Dataset load_dataset(const std::string& path, DatasetFormat format, const LoadOptions& options) {
  if (!fs::exists(path)) throw DataError("dataset path '" + path + "' does not exist");
  return format == DatasetFormat::idx ? load_idx(path, options) : load_directory(path, options);
}

// ---- synthetic task --------------------------------------------------------------

Dataset synth_task(std::uint64_t seed, std::size_t n_samples, std::size_t grid, std::size_t num_classes,
                   double validation_fraction) {
  if (grid < 8) throw ContractError("synthetic images need a grid of at least 8");
  if (num_classes < 2) throw ContractError("synthetic task needs at least two classes");
  Dataset data;
  data.channels = 1;
  data.height = data.width = grid;
  data.num_classes = num_classes;
  data.provenance = "synth:seed=" + std::to_string(seed);
  data.images.resize(n_samples * grid * grid);
  Rng rng(seed);
  const double g = static_cast<double>(grid);
  const double sigma = g / 16.0 + 0.5;
  const double separation = g / 4.0;
  const double period = 4.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::size_t label = rng.below(num_classes);
    const std::size_t texture = rng.below(2);
    const std::size_t layout = (label + num_classes - texture) % num_classes;
    const double angle = std::numbers::pi * static_cast<double>(layout) / static_cast<double>(num_classes);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double margin = separation / 2.0 + sigma;
    const double cy = rng.uniform(margin, g - margin), cx = rng.uniform(margin, g - margin);
    const double dy = 0.5 * separation * std::sin(angle), dx = 0.5 * separation * std::cos(angle);
    double* img = data.images.data() + i * grid * grid;
    for (std::size_t y = 0; y < grid; ++y) {
      for (std::size_t x = 0; x < grid; ++x) {
        const double fy = static_cast<double>(y), fx = static_cast<double>(x);
        const double along = texture == 0 ? fy : fx;
        double v = 0.3 + 0.12 * std::sin(2.0 * std::numbers::pi * along / period + phase);
        for (double s : {-1.0, 1.0}) {
          const double ry = fy - (cy + s * dy), rx = fx - (cx + s * dx);
          v += 0.5 * std::exp(-(ry * ry + rx * rx) / (2.0 * sigma * sigma));
        }
        v += 0.03 * rng.normal();
        img[y * grid + x] = std::clamp(v, 0.0, 1.0);
      }
    }
    data.labels.push_back(label);
  }
  split_dataset(data, split_seed(seed, 1), validation_fraction);
  return data;
}

// ---- proxy training ----------------------------------------------------------------

namespace {

std::vector<std::size_t> labels_of(const Dataset& data, const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(data.labels[i]);
  return out;
}

template <class Fn>
void for_chunks(const std::vector<std::size_t>& indices, std::size_t chunk, Fn fn) {
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const auto end = std::min(indices.size(), start + chunk);
    fn(std::vector<std::size_t>(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                indices.begin() + static_cast<std::ptrdiff_t>(end)));
  }
}

}  // namespace

double evaluate_accuracy(Network& net, const Dataset& data, const std::vector<std::size_t>& indices,
                         std::size_t resolution) {
  if (indices.empty()) return 0.0;
  NoGradGuard no_grad;
  std::size_t correct = 0;
  const std::size_t in_ch = net.plan().in_channels;
  for_chunks(indices, 64, [&](const std::vector<std::size_t>& chunk) {
    const Tensor logits = net.forward(data.batch(chunk, in_ch, resolution), false);
    const std::size_t k = logits.dim(1);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto row = logits.data().subspan(b * k, k);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == data.labels[chunk[b]] ? 1 : 0;
    }
  });
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

double evaluate_loss(Network& net, const Dataset& data, const std::vector<std::size_t>& indices,
                     std::size_t resolution) {
  if (indices.empty()) return 0.0;
  NoGradGuard no_grad;
  double total = 0.0;
  for_chunks(indices, 64, [&](const std::vector<std::size_t>& chunk) {
    const Tensor logits = net.forward(data.batch(chunk, net.plan().in_channels, resolution), false);
    total += cross_entropy(logits, labels_of(data, chunk)).item() * static_cast<double>(chunk.size());
  });
  return total / static_cast<double>(indices.size());
}

ProxyResult train_proxy(const NetworkPlan& plan, const Dataset& data, const ProxyConfig& cfg) {
  if (cfg.epochs == 0) throw ContractError("proxy training needs at least one epoch");
  if (cfg.batch_size == 0) throw ContractError("proxy batch size must be positive");
  if (data.train.empty() || data.validation.empty()) throw DataError("dataset needs train and validation samples");
  NetworkPlan p = plan;
  p.resolution = cfg.resolution;
  p.num_classes = data.num_classes;
  Network net = Network::build(p, cfg.network, split_seed(cfg.seed, 0));
  const auto params = net.parameters();
  AdamW optimizer(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng order_rng(split_seed(cfg.seed, 1));

  ProxyResult result;
  const auto fail = [&](std::size_t epoch, const std::string& why) {
    result.failed = true;
    result.failure = "epoch " + std::to_string(epoch) + ": " + why;
    result.accuracy = 0.0;
    return result;
  };
  try {
    result.initial_loss = evaluate_loss(net, data, data.train, cfg.resolution);
  } catch (const NumericError& e) {
    return fail(0, e.what());
  }
  const std::size_t steps_per_epoch = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch * cfg.epochs);
  std::size_t step = 0;
  std::vector<std::size_t> order = data.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    EpochMetrics metrics;
    metrics.epoch = epoch;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
        const std::vector<std::size_t> idx(
            order.begin() + static_cast<std::ptrdiff_t>(start),
            order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
        optimizer.set_lr(0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps)));
        const Tensor loss = cross_entropy(net.forward(data.batch(idx, p.in_channels, cfg.resolution), true),
                                          labels_of(data, idx));
        if (!std::isfinite(loss.item())) return fail(epoch, "non-finite training loss");
        loss_sum += loss.item() * static_cast<double>(idx.size());
        seen += idx.size();
        optimizer.step(params, backward(loss));
      }
      metrics.train_loss = loss_sum / static_cast<double>(seen);
      metrics.validation_accuracy = evaluate_accuracy(net, data, data.validation, cfg.resolution);
      if (cfg.track_train_loss) metrics.end_train_loss = evaluate_loss(net, data, data.train, cfg.resolution);
    } catch (const NumericError& e) {
      return fail(epoch, e.what());
    }
    result.epochs.push_back(metrics);
  }
  result.accuracy = result.epochs.back().validation_accuracy;
  return result;
}

Evaluation ProxyEvaluator::operator()(const Genome& genome, std::uint64_t seed) const {
  Evaluation e;
  e.macs = network_cost(resolve(genome, cost_skeleton), cost).total.macs;
  BaseSkeleton skeleton = proxy_skeleton;
  skeleton.in_channels = data.channels;
  skeleton.num_classes = data.num_classes;
  ProxyConfig cfg = proxy;
  cfg.seed = seed;
  const auto r = train_proxy(resolve(genome, skeleton), data, cfg);
  e.accuracy = r.accuracy;
  e.failed = r.failed;
  return e;
}

}  // namespace hnas

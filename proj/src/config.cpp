#include "protoseg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "protoseg/core.hpp"

namespace protoseg {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw ArgumentError("config: cannot parse value '" + std::string(value) + "' for key '" +
                        std::string(key) + "'");
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void Config::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) {
      throw ArgumentError(std::string("config: ") + what);
    }
  };
  require(in_channels >= 3, "in_channels must be >= 3");
  require(extractor_hidden1 > 0 && extractor_hidden2 > 0 && n_features > 0 && head_hidden > 0,
          "layer widths must be positive");
  require(n_prototypes > 0, "n_prototypes must be positive");
  require(n_samples > 0, "n_samples must be positive");
  require(k_neighbors > 0, "k_neighbors must be positive");
  require(idw_offset > 0.0, "idw_offset must be positive");
  require(sampling_mode == "fps-xyz", "sampling_mode must be 'fps-xyz'");
  require(mask_threshold > 0.0 && mask_threshold < 1.0, "mask_threshold must lie in (0,1)");
  require(nms_iou > 0.0 && nms_iou < 1.0, "nms_iou must lie in (0,1)");
  require(merge_iou > 0.0 && merge_iou < 1.0, "merge_iou must lie in (0,1)");
  require(min_instance_points >= 0, "min_instance_points must be >= 0");
  require(block_size > 0.0 && stride > 0.0, "block_size and stride must be positive");
  require(stride <= block_size, "stride must not exceed block_size");
  require(points_per_block > 0, "points_per_block must be positive");
  require(n_samples <= points_per_block, "n_samples must not exceed points_per_block");
  require(lr > 0.0, "lr must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(epochs >= 0, "epochs must be >= 0");
}

void Config::set(std::string_view key, std::string_view value) {
  value = trim(value);
  auto as_int = [&] { return parse_number<int>(key, value); };
  auto as_double = [&] { return parse_number<double>(key, value); };

  if (key == "in_channels") in_channels = as_int();
  else if (key == "extractor_hidden1") extractor_hidden1 = as_int();
  else if (key == "extractor_hidden2") extractor_hidden2 = as_int();
  else if (key == "n_features") n_features = as_int();
  else if (key == "head_hidden") head_hidden = as_int();
  else if (key == "n_prototypes") n_prototypes = as_int();
  else if (key == "n_samples") n_samples = as_int();
  else if (key == "k_neighbors") k_neighbors = as_int();
  else if (key == "idw_offset") idw_offset = as_double();
  else if (key == "sampling_mode") sampling_mode = std::string(value);
  else if (key == "mask_threshold") mask_threshold = as_double();
  else if (key == "nms_iou") nms_iou = as_double();
  else if (key == "min_instance_points") min_instance_points = as_int();
  else if (key == "merge_iou") merge_iou = as_double();
  else if (key == "block_size") block_size = as_double();
  else if (key == "stride") stride = as_double();
  else if (key == "points_per_block") points_per_block = as_int();
  else if (key == "lr") lr = as_double();
  else if (key == "batch_size") batch_size = as_int();
  else if (key == "epochs") epochs = as_int();
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "augment") {
    const int flag = as_int();
    if (flag != 0 && flag != 1) {
      throw ArgumentError("config: augment must be 0 or 1");
    }
    augment = flag == 1;
  }
  else throw ArgumentError("config: unknown key '" + std::string(key) + "'");
}

Config Config::parse(std::string_view text, Config base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);

    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ArgumentError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

Config Config::parse(std::string_view text) { return parse(text, Config{}); }

Config Config::load(const std::filesystem::path& path, Config base) {
  std::ifstream in(path);
  if (!in) {
    throw ArgumentError("config: cannot open " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), std::move(base));
}

std::string Config::to_text() const {
  std::ostringstream os;
  os << "in_channels = " << in_channels << '\n'
     << "extractor_hidden1 = " << extractor_hidden1 << '\n'
     << "extractor_hidden2 = " << extractor_hidden2 << '\n'
     << "n_features = " << n_features << '\n'
     << "head_hidden = " << head_hidden << '\n'
     << "n_prototypes = " << n_prototypes << '\n'
     << "n_samples = " << n_samples << '\n'
     << "k_neighbors = " << k_neighbors << '\n'
     << "idw_offset = " << format_double(idw_offset) << '\n'
     << "sampling_mode = " << sampling_mode << '\n'
     << "mask_threshold = " << format_double(mask_threshold) << '\n'
     << "nms_iou = " << format_double(nms_iou) << '\n'
     << "min_instance_points = " << min_instance_points << '\n'
     << "merge_iou = " << format_double(merge_iou) << '\n'
     << "block_size = " << format_double(block_size) << '\n'
     << "stride = " << format_double(stride) << '\n'
     << "points_per_block = " << points_per_block << '\n'
     << "lr = " << format_double(lr) << '\n'
     << "batch_size = " << batch_size << '\n'
     << "epochs = " << epochs << '\n'
     << "seed = " << seed << '\n'
     << "augment = " << (augment ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace protoseg

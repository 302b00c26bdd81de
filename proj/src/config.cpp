#include "spse/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "spse/errors.hpp"

namespace spse {

std::string to_string(InitMode mode) {
  return mode == InitMode::kFromOriginal ? "from-original" : "ellipsoid-blob";
}

InitMode init_mode_from_string(const std::string& text) {
  if (text == "from-original") return InitMode::kFromOriginal;
  if (text == "ellipsoid-blob") return InitMode::kEllipsoidBlob;
  throw ConfigError("init_mode must be from-original or ellipsoid-blob, got '" + text + "'");
}

SpsSchedule EditConfig::geometry_schedule() const {
  SpsSchedule s;
  s.total_steps = geometry_steps;
  s.phase1_end = std::min(phase1_steps, geometry_steps);
  s.phase3_start = geometry_steps - std::min(phase3_steps, geometry_steps - s.phase1_end);
  s.lambda_t_scale = lambda_t_scale;
  s.lambda_d_scale = lambda_d_scale;
  s.guidance_scale = guidance_scale;
  s.validate();
  return s;
}

SpsSchedule EditConfig::texture_schedule() const {
  SpsSchedule s;
  s.total_steps = texture_steps;
  s.phase1_end = 0;
  s.phase3_start = texture_steps - std::min(phase3_steps, texture_steps);
  s.lambda_t_scale = lambda_t_scale;
  s.lambda_d_scale = lambda_d_scale;
  s.guidance_scale = guidance_scale;
  s.validate();
  return s;
}

void EditConfig::validate() const {
  if (!(fusion_rate >= 0.0 && fusion_rate <= 1.0)) throw ConfigError("fusion_rate must lie in [0, 1]");
  if (!(aux_guidance_weight >= 0.0) || !std::isfinite(aux_guidance_weight)) {
    throw ConfigError("aux_guidance_weight must be non-negative");
  }
  if (!(lambda_t_scale >= 0.0) || !(lambda_d_scale >= 0.0)) throw ConfigError("lambda scales must be non-negative");
  if (!std::isfinite(guidance_scale)) throw ConfigError("guidance_scale must be finite");
  if (grid_size < 2) throw ConfigError("grid_size must be at least 2");
  if (image_size < 1) throw ConfigError("image_size must be positive");
  if (draws_per_step < 1) throw ConfigError("draws_per_step must be positive");
  if (!(t_min_fraction > 0.0 && t_min_fraction <= t_max_fraction && t_max_fraction <= 1.0)) {
    throw ConfigError("timestep range fractions must satisfy 0 < min <= max <= 1");
  }
  geometry_schedule();
  texture_schedule();
}

std::vector<std::string> EditConfig::warnings() const {
  std::vector<std::string> out;
  if (fusion_rate < kRecommendedFusionMin || fusion_rate > kRecommendedFusionMax) {
    std::ostringstream msg;
    msg << "fusion_rate " << fusion_rate << " is outside the recommended range [" << kRecommendedFusionMin << ", "
        << kRecommendedFusionMax << "]";
    out.push_back(msg.str());
  }
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "fusion_rate",   "guidance_scale", "lambda_t_scale",      "lambda_d_scale", "geometry_steps",
      "texture_steps", "phase1_steps",   "phase3_steps",        "aux_guidance_weight",
      "grid_size",     "image_size",     "seed",                "init_mode"};
  return keys;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
    throw ConfigError("value for '" + key + "' is not a number: '" + value + "'");
  }
  return out;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("value for '" + key + "' is not a non-negative integer: '" + value + "'");
  }
  return out;
}

}  // namespace

void apply_config_value(EditConfig& c, const std::string& key, const std::string& value) {
  if (key == "fusion_rate") c.fusion_rate = parse_double(key, value);
  else if (key == "guidance_scale") c.guidance_scale = parse_double(key, value);
  else if (key == "lambda_t_scale") c.lambda_t_scale = parse_double(key, value);
  else if (key == "lambda_d_scale") c.lambda_d_scale = parse_double(key, value);
  else if (key == "geometry_steps") c.geometry_steps = parse_unsigned(key, value);
  else if (key == "texture_steps") c.texture_steps = parse_unsigned(key, value);
  else if (key == "phase1_steps") c.phase1_steps = parse_unsigned(key, value);
  else if (key == "phase3_steps") c.phase3_steps = parse_unsigned(key, value);
  else if (key == "aux_guidance_weight") c.aux_guidance_weight = parse_double(key, value);
  else if (key == "grid_size") c.grid_size = parse_unsigned(key, value);
  else if (key == "image_size") c.image_size = parse_unsigned(key, value);
  else if (key == "seed") c.seed = parse_unsigned(key, value);
  else if (key == "init_mode") c.init_mode = init_mode_from_string(value);
  else throw ConfigError("unknown config key '" + key + "'");
}

EditConfig parse_config(const std::string& text, EditConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");
    apply_config_value(base, key, value);
  }
  base.validate();
  return base;
}

EditConfig load_config(const std::filesystem::path& path, EditConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

std::string format_config(const EditConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "fusion_rate = " << c.fusion_rate << "\n"
      << "guidance_scale = " << c.guidance_scale << "\n"
      << "lambda_t_scale = " << c.lambda_t_scale << "\n"
      << "lambda_d_scale = " << c.lambda_d_scale << "\n"
      << "geometry_steps = " << c.geometry_steps << "\n"
      << "texture_steps = " << c.texture_steps << "\n"
      << "phase1_steps = " << c.phase1_steps << "\n"
      << "phase3_steps = " << c.phase3_steps << "\n"
      << "aux_guidance_weight = " << c.aux_guidance_weight << "\n"
      << "grid_size = " << c.grid_size << "\n"
      << "image_size = " << c.image_size << "\n"
      << "seed = " << c.seed << "\n"
      << "init_mode = " << to_string(c.init_mode) << "\n";
  return out.str();
}

}  // namespace spse

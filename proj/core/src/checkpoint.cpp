#include "posenc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "posenc/errors.hpp"
#include "posenc/rng.hpp"

namespace posenc {
namespace {

constexpr char kMagic[8] = {'P', 'O', 'S', 'E', 'N', 'C', 'K', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

void write_doubles(std::ostream& out, std::span<const double> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_exact(std::istream& in, char* dst, std::size_t n, const std::filesystem::path& path) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw DataError(path.string() + ": truncated checkpoint");
}

}  // namespace

void save_checkpoint(const SequentialRecommender& model, const std::filesystem::path& path) {
  const auto params = model.parameters();
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : params) tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  if (model.attribute_dims() > 0) {
    tensors.push_back({{"name", "attributes"}, {"shape", model.attribute_table().shape()}});
  }
  const nlohmann::json header = {
      {"version", kCheckpointVersion},
      {"config", to_json(model.config())},
      {"num_items", model.num_items()},
      {"attribute_dims", model.attribute_dims()},
      {"tensors", tensors},
  };
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) write_doubles(out, p.tensor.values());
  if (model.attribute_dims() > 0) write_doubles(out, model.attribute_table().values());
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

std::shared_ptr<SequentialRecommender> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  read_exact(in, magic, sizeof magic, path);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError(path.string() + ": not a checkpoint");
  std::uint64_t len = 0;
  read_exact(in, reinterpret_cast<char*>(&len), sizeof len, path);
  if (len > (1u << 26)) throw DataError(path.string() + ": implausible header length");
  std::string text(len, '\0');
  read_exact(in, text.data(), len, path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (header.value("version", 0) != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version");
  }
  const ModelConfig config = model_config_from_json(header.at("config"));
  const auto num_items = header.at("num_items").get<std::size_t>();
  const auto attribute_dims = header.at("attribute_dims").get<std::size_t>();

  std::vector<std::string> names;
  std::vector<std::vector<double>> values;
  for (const auto& t : header.at("tensors")) {
    const Shape shape = t.at("shape").get<Shape>();
    std::vector<double> v(numel(shape));
    read_exact(in, reinterpret_cast<char*>(v.data()), v.size() * sizeof(double), path);
    names.push_back(t.at("name").get<std::string>());
    values.push_back(std::move(v));
  }

  std::vector<double> attributes;
  if (attribute_dims > 0) {
    if (names.empty() || names.back() != "attributes") throw DataError(path.string() + ": missing attributes");
    // Drop the padding row stored with the table.
    attributes.assign(values.back().begin() + static_cast<std::ptrdiff_t>(attribute_dims), values.back().end());
    names.pop_back();
    values.pop_back();
  }
  Rng rng(config.seed);
  auto model = std::make_shared<SequentialRecommender>(config, num_items, rng, attributes, attribute_dims);
  const auto params = model->parameters();
  if (params.size() != names.size()) throw DataError(path.string() + ": tensor count does not match config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != names[i] || params[i].tensor.numel() != values[i].size()) {
      throw DataError(path.string() + ": tensor '" + names[i] + "' does not match the model layout");
    }
  }
  restore(*model, values);
  return model;
}

}  // namespace posenc

// SPDX-License-Identifier: Apache-2.0
//
// AMB1 layout (little-endian):
//   magic "AMB1" | u16 version (1)
//   config: u32 input_dims[3] | u32 model_dim | u32 state_dim | u32 num_layers |
//           f64 lambda | u8 task | u8 scan_order | u8 fusion | u8 local_alignment |
//           u8 plan_mode | u8 kernel_fixed | f64 sigma (0 when median)
//   u32 tensor count | per tensor: u8 rank | rank x u32 dim | f64 values

#include <cstring>

#include "xmf/bytes.hpp"
#include "xmf/errors.hpp"
#include "xmf/fusion.hpp"

namespace xmf::fusion {
namespace {

constexpr char kMagic[4] = {'A', 'M', 'B', '1'};
constexpr std::uint16_t kVersion = 1;

using bytes::put_le;

template <class E>
E enum_from(std::uint8_t v, std::uint8_t max, const char* what) {
  if (v > max) throw FormatError(std::string("invalid ") + what + " code " + std::to_string(v));
  return static_cast<E>(v);
}

}  // namespace

std::vector<std::uint8_t> checkpoint_encode(const FusionModel& model) {
  const FusionConfig& c = model.config;
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le(out, kVersion);
  for (std::size_t d : c.input_dims) put_le(out, static_cast<std::uint32_t>(d));
  put_le(out, static_cast<std::uint32_t>(c.model_dim));
  put_le(out, static_cast<std::uint32_t>(c.state_dim));
  put_le(out, static_cast<std::uint32_t>(c.num_layers));
  put_le(out, c.lambda);
  put_le(out, static_cast<std::uint8_t>(c.task));
  put_le(out, static_cast<std::uint8_t>(c.scan_order));
  put_le(out, static_cast<std::uint8_t>(c.fusion));
  put_le(out, static_cast<std::uint8_t>(c.local_alignment));
  put_le(out, static_cast<std::uint8_t>(c.plan_mode));
  put_le(out, static_cast<std::uint8_t>(c.kernel.sigma.has_value()));
  put_le(out, c.kernel.sigma.value_or(0.0));

  const std::vector<Tensor> tensors = model.flat_parameters();
  put_le(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    put_le(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_le(out, v);
  }
  return out;
}

FusionModel checkpoint_decode(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  r.need(4, "magic");
  if (std::memcmp(data.data(), kMagic, 4) != 0) throw FormatError("bad magic");
  for (int i = 0; i < 4; ++i) r.get<std::uint8_t>("magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }

  FusionConfig c;
  for (std::size_t& d : c.input_dims) d = r.get<std::uint32_t>("input width");
  c.model_dim = r.get<std::uint32_t>("model_dim");
  c.state_dim = r.get<std::uint32_t>("state_dim");
  c.num_layers = r.get<std::uint32_t>("num_layers");
  c.lambda = r.get<double>("lambda");
  c.task = enum_from<Task>(r.get<std::uint8_t>("task"), 1, "task");
  c.scan_order = enum_from<ScanOrder>(r.get<std::uint8_t>("scan order"), 0, "scan order");
  c.fusion = enum_from<FusionMode>(r.get<std::uint8_t>("fusion mode"), 2, "fusion mode");
  c.local_alignment = enum_from<std::uint8_t>(r.get<std::uint8_t>("local flag"), 1, "flag") != 0;
  c.plan_mode = enum_from<align::PlanMode>(r.get<std::uint8_t>("plan mode"), 1, "plan mode");
  const bool fixed = enum_from<std::uint8_t>(r.get<std::uint8_t>("kernel kind"), 1, "kernel") != 0;
  const double sigma = r.get<double>("sigma");
  if (fixed) c.kernel.sigma = sigma;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid config block: ") + e.what());
  }

  FusionModel model = FusionModel::init(c, 0);
  const std::vector<std::string> names = model.parameter_names();
  const std::vector<Tensor> expected = model.flat_parameters();
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != expected.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(expected.size()));
  }
  std::vector<Tensor> loaded;
  loaded.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rank = r.get<std::uint8_t>("tensor rank");
    Shape shape(rank);
    for (std::size_t& d : shape) d = r.get<std::uint32_t>("tensor dim");
    if (shape != expected[i].shape()) {
      throw FormatError("tensor " + names[i] + " has shape " + shape_str(shape) + ", expected " +
                        shape_str(expected[i].shape()));
    }
    const std::size_t n = shape_numel(shape);
    r.need(n * 8, "tensor values");
    std::vector<double> values(n);
    for (double& v : values) v = r.get<double>("tensor value");
    loaded.emplace_back(std::move(shape), std::move(values));
  }
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes at byte offset " + std::to_string(r.pos()));
  }
  model.set_flat_parameters(loaded);
  return model;
}

void save_checkpoint(const FusionModel& model, const std::filesystem::path& path) {
  bytes::write_file(path, checkpoint_encode(model));
}

FusionModel load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_decode(bytes::read_file(path));
}

}  // namespace xmf::fusion

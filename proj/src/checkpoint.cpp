#include "slpd/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <type_traits>

#include "slpd/binary_io.hpp"
#include "slpd/errors.hpp"

namespace slpd {

namespace {

constexpr char kMagic[4] = {'S', 'L', 'P', 'C'};
constexpr std::uint32_t kVersion = 1;

struct TensorRef {
  std::string name;
  std::vector<std::uint32_t> dims;
  const std::vector<double>* data;
  std::vector<double>* mut = nullptr;
};

// Fixed tensor order: it defines the file layout.
template <class State>
std::vector<TensorRef> tensor_table(State& state) {
  std::vector<TensorRef> refs;
  auto add_net = [&](auto& net, const std::string& prefix) {
    auto add_mlp = [&](auto& mlp, const std::string& mprefix) {
      for (std::size_t li = 0; li < mlp.layers.size(); ++li) {
        auto& layer = mlp.layers[li];
        TensorRef w{mprefix + "." + std::to_string(li) + ".w",
                    {static_cast<std::uint32_t>(layer.out), static_cast<std::uint32_t>(layer.in)},
                    &layer.w};
        TensorRef b{mprefix + "." + std::to_string(li) + ".b",
                    {static_cast<std::uint32_t>(layer.out)},
                    &layer.b};
        if constexpr (!std::is_const_v<State>) {
          w.mut = &layer.w;
          b.mut = &layer.b;
        }
        refs.push_back(std::move(w));
        refs.push_back(std::move(b));
      }
    };
    add_mlp(net.encoder, prefix + ".encoder");
    add_mlp(net.head, prefix + ".head");
  };
  add_net(state.student, "student");
  add_net(state.teacher, "teacher");
  TensorRef center{"center", {static_cast<std::uint32_t>(state.center.size())}, &state.center};
  if constexpr (!std::is_const_v<State>) center.mut = &state.center;
  refs.push_back(std::move(center));
  return refs;
}

}  // namespace

void save_checkpoint(const DistillState& state, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  detail::write_u32_le(os, kVersion);
  detail::write_u32_le(os, static_cast<std::uint32_t>(state.student.encoder.act));
  detail::write_f64_le(os, state.tau_student);
  detail::write_f64_le(os, state.tau_teacher);
  detail::write_f64_le(os, state.ema_momentum);
  detail::write_f64_le(os, state.center_momentum);

  const auto table = tensor_table(state);
  detail::write_u32_le(os, static_cast<std::uint32_t>(table.size()));
  for (const auto& t : table) {
    detail::write_u32_le(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_u32_le(os, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) detail::write_u32_le(os, d);
  }
  for (const auto& t : table) {
    for (double v : *t.data) detail::write_f32_le(os, static_cast<float>(v));
  }
  if (!os) throw DataError("I/O failure writing checkpoint: " + path.string());
}

DistillState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing checkpoint: " + path.string());
  const std::string ctx = path.string();
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("bad magic bytes in checkpoint: " + path.string());
  }
  const std::uint32_t version = detail::read_u32_le(is, ctx);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " +
                    path.string());
  }
  const std::uint32_t act = detail::read_u32_le(is, ctx);
  if (act > 2) throw DataError("invalid activation id in checkpoint: " + path.string());

  DistillState state;
  state.tau_student = detail::read_f64_le(is, ctx);
  state.tau_teacher = detail::read_f64_le(is, ctx);
  state.ema_momentum = detail::read_f64_le(is, ctx);
  state.center_momentum = detail::read_f64_le(is, ctx);

  struct Entry {
    std::string name;
    std::vector<std::uint32_t> dims;
  };
  const std::uint32_t count = detail::read_u32_le(is, ctx);
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    const std::uint32_t len = detail::read_u32_le(is, ctx);
    e.name.resize(len);
    is.read(e.name.data(), len);
    if (!is) throw DataError("truncated tensor name in checkpoint: " + path.string());
    const std::uint32_t rank = detail::read_u32_le(is, ctx);
    e.dims.resize(rank);
    for (auto& d : e.dims) d = detail::read_u32_le(is, ctx);
  }

  // Rebuild the network skeletons from the shape table, then fill payloads
  // in table order.
  const Activation activation = static_cast<Activation>(act);
  auto build_mlp = [&](const std::string& prefix) {
    Mlp m;
    m.act = activation;
    for (const auto& e : entries) {
      if (e.name.rfind(prefix + ".", 0) == 0 && e.name.size() > 2 &&
          e.name.compare(e.name.size() - 2, 2, ".w") == 0) {
        if (e.dims.size() != 2) throw DataError("bad weight rank in checkpoint: " + e.name);
        LinearLayer layer;
        layer.out = e.dims[0];
        layer.in = e.dims[1];
        layer.w.assign(layer.in * layer.out, 0.0);
        layer.b.assign(layer.out, 0.0);
        m.layers.push_back(std::move(layer));
      }
    }
    if (m.layers.empty()) throw DataError("checkpoint missing tensors for " + prefix);
    return m;
  };
  state.student.encoder = build_mlp("student.encoder");
  state.student.head = build_mlp("student.head");
  state.teacher.encoder = build_mlp("teacher.encoder");
  state.teacher.head = build_mlp("teacher.head");

  auto center_entry = std::find_if(entries.begin(), entries.end(),
                                   [](const Entry& e) { return e.name == "center"; });
  if (center_entry == entries.end() || center_entry->dims.size() != 1) {
    throw DataError("checkpoint missing center tensor: " + path.string());
  }
  state.center.assign(center_entry->dims[0], 0.0);

  auto table = tensor_table(state);
  if (table.size() != entries.size()) {
    throw DataError("unexpected tensor count in checkpoint: " + path.string());
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].name != entries[i].name) {
      throw DataError("unexpected tensor order in checkpoint: " + entries[i].name);
    }
    std::size_t expected = 1;
    for (auto d : entries[i].dims) expected *= d;
    if (expected != table[i].mut->size()) {
      throw DataError("tensor shape mismatch in checkpoint: " + entries[i].name);
    }
    for (auto& v : *table[i].mut) v = detail::read_f32_le(is, ctx);
  }
  is.peek();
  if (!is.eof()) throw DataError("trailing bytes in checkpoint: " + path.string());
  return state;
}

}  // namespace slpd

// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <zlib.h>

#include "lcnx/json_io.hpp"

namespace lcnx {

namespace {

constexpr std::size_t kPrefixBytes = 24;

template <typename U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& in, std::size_t pos) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

std::uint32_t crc_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void append_floats(std::string& out, const NdArray<float>& t) {
    const std::size_t start = out.size();
    out.resize(start + t.numel() * 4);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data() + start, t.data().data(), t.numel() * 4);
    } else {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(t[i]);
            for (std::size_t b = 0; b < 4; ++b) out[start + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
        }
    }
}

NdArray<float> read_floats(const std::string& in, std::size_t pos, const Shape& shape) {
    NdArray<float> t(shape);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(t.data().data(), in.data() + pos, t.numel() * 4);
    } else {
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::bit_cast<float>(get_le<std::uint32_t>(in, pos + 4 * i));
    }
    return t;
}

nlohmann::json header_json(const CheckpointHeader& h) {
    nlohmann::json j;
    j["version"] = h.version;
    j["kind"] = to_string(h.kind);
    j["model"] = h.model;
    if (h.lora) j["lora"] = *h.lora;
    j["class_names"] = h.class_names;
    j["metadata"] = h.metadata;
    auto tensors = nlohmann::json::array();
    for (const auto& t : h.tensors) {
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}, {"offset", t.offset}});
    }
    j["tensors"] = std::move(tensors);
    j["payload_bytes"] = h.payload_bytes;
    j["crc32"] = h.crc32;
    return j;
}

CheckpointKind parse_kind(const std::string& s) {
    if (s == "base") return CheckpointKind::base;
    if (s == "adapter") return CheckpointKind::adapter;
    throw IoError("checkpoint: unknown kind '" + s + "'");
}

CheckpointHeader parse_header(const nlohmann::json& j) {
    CheckpointHeader h;
    h.version = j.at("version").get<std::uint32_t>();
    h.kind = parse_kind(j.at("kind").get<std::string>());
    h.model = j.at("model").get<ModelConfig>();
    if (j.contains("lora")) h.lora = j.at("lora").get<LoraConfig>();
    h.class_names = j.at("class_names").get<std::vector<std::string>>();
    h.metadata = j.at("metadata");
    for (const auto& t : j.at("tensors")) {
        if (t.at("dtype").get<std::string>() != "f32") throw IoError("checkpoint: unsupported dtype");
        h.tensors.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>(),
                             t.at("offset").get<std::uint64_t>()});
    }
    h.payload_bytes = j.at("payload_bytes").get<std::uint64_t>();
    h.crc32 = j.at("crc32").get<std::uint32_t>();
    return h;
}

} // namespace

std::string to_string(CheckpointKind kind) { return kind == CheckpointKind::base ? "base" : "adapter"; }

const NdArray<float>& Checkpoint::tensor(const std::string& name) const {
    for (std::size_t i = 0; i < header.tensors.size(); ++i) {
        if (header.tensors[i].name == name) return tensors.at(i);
    }
    throw CompatibilityError("checkpoint: no tensor named " + name);
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.tensors.size() != ckpt.header.tensors.size()) {
        throw ConfigError("checkpoint: tensor index and data disagree");
    }
    CheckpointHeader h = ckpt.header;
    std::string payload;
    std::size_t total = 0;
    for (const auto& t : ckpt.tensors) total += t.numel() * 4;
    payload.reserve(total);
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        if (ckpt.tensors[i].shape() != h.tensors[i].shape) {
            throw ConfigError("checkpoint: shape mismatch for " + h.tensors[i].name);
        }
        h.tensors[i].offset = payload.size();
        append_floats(payload, ckpt.tensors[i]);
    }
    h.payload_bytes = payload.size();
    h.crc32 = crc_of(payload.data(), payload.size());

    const std::string header = header_json(h).dump();
    std::string out;
    out.reserve(kPrefixBytes + header.size() + payload.size());
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_le<std::uint32_t>(out, h.version);
    put_le<std::uint64_t>(out, header.size());
    put_le<std::uint32_t>(out, crc_of(header.data(), header.size()));
    out += header;
    out += payload;
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < kPrefixBytes || std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw IoError("checkpoint: bad magic or truncated prefix");
    }
    const auto version = get_le<std::uint32_t>(bytes, 8);
    if (version != 1) throw IoError("checkpoint: unsupported format version " + std::to_string(version));
    const auto header_len = get_le<std::uint64_t>(bytes, 12);
    if (header_len > bytes.size() - kPrefixBytes) throw ChecksumError("checkpoint: truncated header");
    if (crc_of(bytes.data() + kPrefixBytes, header_len) != get_le<std::uint32_t>(bytes, 20)) {
        throw ChecksumError("checkpoint: header checksum mismatch");
    }

    CheckpointHeader h;
    try {
        h = parse_header(nlohmann::json::parse(bytes.substr(kPrefixBytes, header_len)));
    } catch (const nlohmann::json::exception& e) {
        throw ChecksumError(std::string("checkpoint: corrupt header: ") + e.what());
    }
    const std::size_t payload_pos = kPrefixBytes + header_len;
    if (bytes.size() - payload_pos != h.payload_bytes) {
        throw ChecksumError("checkpoint: payload is " + std::to_string(bytes.size() - payload_pos) +
                            " bytes, header says " + std::to_string(h.payload_bytes));
    }
    if (crc_of(bytes.data() + payload_pos, h.payload_bytes) != h.crc32) {
        throw ChecksumError("checkpoint: payload checksum mismatch");
    }
    Checkpoint ckpt;
    for (const auto& t : h.tensors) {
        const std::uint64_t len = shape_numel(t.shape) * 4;
        if (t.offset > h.payload_bytes || len > h.payload_bytes - t.offset) {
            throw ChecksumError("checkpoint: tensor " + t.name + " exceeds payload");
        }
        ckpt.tensors.push_back(read_floats(bytes, payload_pos + t.offset, t.shape));
    }
    ckpt.header = std::move(h);
    return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::string bytes = encode_checkpoint(ckpt);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("checkpoint: cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("checkpoint: write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("checkpoint: rename to " + path.string() + " failed: " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

Checkpoint checkpoint_of(const Model<float>& model, const nlohmann::json& metadata) {
    Checkpoint c;
    c.header.kind = CheckpointKind::base;
    c.header.model = model.config();
    c.header.class_names = model.class_names();
    c.header.metadata = metadata;
    for (const auto* p : model.parameters()) {
        c.header.tensors.push_back({p->name, p->value.shape(), 0});
        c.tensors.push_back(p->value);
    }
    return c;
}

Checkpoint checkpoint_of(const PeftModel<float>& model, const nlohmann::json& metadata) {
    Checkpoint c;
    c.header.kind = CheckpointKind::adapter;
    c.header.model = model.config();
    c.header.lora = model.lora_config();
    c.header.class_names = model.class_names();
    c.header.metadata = metadata;
    for (const auto& ad : model.adapters()) {
        for (const auto* p : {&ad.a, &ad.b}) {
            c.header.tensors.push_back({p->name, p->value.shape(), 0});
            c.tensors.push_back(p->value);
        }
    }
    for (const char* name : {"head.fc.weight", "head.fc.bias"}) {
        const auto& p = model.base().param(name);
        c.header.tensors.push_back({p.name, p.value.shape(), 0});
        c.tensors.push_back(p.value);
    }
    return c;
}

void save_base(const Model<float>& model, const std::filesystem::path& path, const nlohmann::json& metadata) {
    write_checkpoint(checkpoint_of(model, metadata), path);
}

void save_adapter(const PeftModel<float>& model, const std::filesystem::path& path, const nlohmann::json& metadata) {
    write_checkpoint(checkpoint_of(model, metadata), path);
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.header.kind != CheckpointKind::base) {
        throw CompatibilityError("checkpoint: expected a base checkpoint, got " + to_string(ckpt.header.kind));
    }
    const auto layout = model_layout(ckpt.header.model);
    if (layout.size() != ckpt.tensors.size()) {
        throw CompatibilityError("checkpoint: tensor count does not match its model config");
    }
    std::vector<Parameter<float>> params;
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        if (layout[i].name != ckpt.header.tensors[i].name || layout[i].shape != ckpt.tensors[i].shape()) {
            throw CompatibilityError("checkpoint: tensor " + ckpt.header.tensors[i].name +
                                     " does not match its model config");
        }
        params.push_back({layout[i].name, ckpt.tensors[i], layout[i].role, true});
    }
    return Model<float>(ckpt.header.model, std::move(params), ckpt.header.class_names);
}

Model<float> load_base(const std::filesystem::path& path) { return model_from_checkpoint(read_checkpoint(path)); }

PeftModel<float> attach_adapter(Model<float> base, const Checkpoint& adapter) {
    const auto& h = adapter.header;
    if (h.kind != CheckpointKind::adapter || !h.lora) {
        throw CompatibilityError("checkpoint: expected an adapter checkpoint");
    }
    if (!base.config().same_backbone(h.model)) {
        throw CompatibilityError("adapter was trained on a different backbone (dims/depths differ)");
    }
    const LoraConfig& lora = *h.lora;
    const auto layout = lora_layout(base.config(), lora);
    std::vector<LoraAdapter<float>> adapters;
    for (std::size_t i = 0; i + 1 < layout.size(); i += 2) {
        const std::string target = layout[i].name.substr(0, layout[i].name.size() - std::string(".lora_A").size());
        LoraAdapter<float> ad;
        ad.target = target;
        ad.rank = lora.rank;
        ad.alpha = lora.alpha;
        ad.dropout = lora.dropout;
        ad.a = {layout[i].name, adapter.tensor(layout[i].name), ParamRole::lora_a, true};
        ad.b = {layout[i + 1].name, adapter.tensor(layout[i + 1].name), ParamRole::lora_b, true};
        if (ad.a.value.shape() != layout[i].shape || ad.b.value.shape() != layout[i + 1].shape) {
            throw CompatibilityError("adapter tensor shapes do not fit the base for " + target);
        }
        adapters.push_back(std::move(ad));
    }
    base.reset_head(h.model.num_classes, 0);
    base.set_trainable(false);
    auto& hw = base.param("head.fc.weight");
    auto& hb = base.param("head.fc.bias");
    hw.value = adapter.tensor("head.fc.weight");
    hb.value = adapter.tensor("head.fc.bias");
    if (hw.value.shape() != Shape{static_cast<std::size_t>(h.model.num_classes),
                                  static_cast<std::size_t>(base.config().dims[3])}) {
        throw CompatibilityError("adapter head does not fit the base");
    }
    hw.trainable = true;
    hb.trainable = true;
    base.set_class_names(h.class_names);
    return PeftModel<float>(std::move(base), lora, std::move(adapters));
}

PeftModel<float> load_peft(const std::filesystem::path& base_path, const std::filesystem::path& adapter_path) {
    return attach_adapter(load_base(base_path), read_checkpoint(adapter_path));
}

} // namespace lcnx

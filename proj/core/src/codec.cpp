#include "fedstage/codec.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "fedstage/errors.hpp"

namespace fedstage {

namespace {

constexpr uint8_t kMagic[4] = {'F', 'E', 'D', 'U'};
constexpr uint8_t kVersion = 1;
constexpr size_t kHeaderSize = 4 + 1 + 1 + 8;

enum MsgType : uint8_t {
  kModelRequest = 1,
  kModelResponse = 2,
  kUpdateSubmit = 3,
  kStageAck = 4,
  kErrorReply = 5,
};

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<uint64_t>(v));
}

void put_string(std::vector<uint8_t>& out, const std::string& s) {
  if (s.size() > std::numeric_limits<uint16_t>::max()) {
    fail(ErrorCode::Format, "string too long for wire format");
  }
  put_u16(out, static_cast<uint16_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

// Bounds-checked little-endian reader.
class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const uint16_t len = u16();
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  size_t remaining() const { return bytes_.size() - pos_; }
  void expect_end() const {
    if (pos_ != bytes_.size()) fail(ErrorCode::Format, "trailing bytes in payload");
  }

 private:
  void need(size_t n) const {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::Truncated, "payload too short");
  }
  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

void encode_params_into(std::vector<uint8_t>& out, const ParameterSet& p) {
  p.check();
  if (p.layout.entries.size() > std::numeric_limits<uint32_t>::max()) {
    fail(ErrorCode::Format, "too many layout entries");
  }
  put_u32(out, static_cast<uint32_t>(p.layout.entries.size()));
  for (const auto& e : p.layout.entries) {
    put_string(out, e.name);
    if (e.dims.size() > 255) fail(ErrorCode::Format, "too many dims");
    out.push_back(static_cast<uint8_t>(e.dims.size()));
    for (uint32_t d : e.dims) put_u32(out, d);
  }
  for (double v : p.values) put_f64(out, v);
}

ParameterSet decode_params_from(Reader& r) {
  const uint32_t n_entries = r.u32();
  // Each entry occupies at least 3 bytes (name length + dim count).
  if (n_entries > r.remaining() / 3) {
    fail(ErrorCode::Truncated, "entry count larger than payload");
  }
  ParameterSet p;
  p.layout.entries.reserve(n_entries);
  for (uint32_t i = 0; i < n_entries; ++i) {
    LayoutEntry e;
    e.name = r.str();
    const uint8_t n_dims = r.u8();
    e.dims.reserve(n_dims);
    for (uint8_t d = 0; d < n_dims; ++d) e.dims.push_back(r.u32());
    if (e.count() == 0 || e.dims.empty()) {
      fail(ErrorCode::Format, "invalid entry dims");
    }
    // Guard against absurd counts claimed by hostile input.
    if (e.count() > r.remaining() / 8 + 1) {
      fail(ErrorCode::Truncated, "entry larger than payload");
    }
    p.layout.entries.push_back(std::move(e));
  }
  p.layout.validate();
  const size_t total = p.layout.total();
  if (r.remaining() != total * 8) {
    fail(ErrorCode::Truncated, "value block size mismatch");
  }
  p.values.reserve(total);
  for (size_t i = 0; i < total; ++i) {
    const double v = r.f64();
    if (!std::isfinite(v)) fail(ErrorCode::Format, "non-finite parameter value");
    p.values.push_back(v);
  }
  return p;
}

uint8_t msg_type_of(const Message& msg) {
  return static_cast<uint8_t>(msg.index() + 1);
}

std::vector<uint8_t> encode_payload(const Message& msg) {
  std::vector<uint8_t> out;
  std::visit(
      [&out](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ModelRequestMsg>) {
          put_string(out, m.client_id);
          put_u32(out, m.num_classes);
        } else if constexpr (std::is_same_v<T, ModelResponseMsg>) {
          encode_params_into(out, m.params);
        } else if constexpr (std::is_same_v<T, UpdateSubmitMsg>) {
          put_string(out, m.client_id);
          put_u64(out, m.num_examples);
          encode_params_into(out, m.backbone);
        } else if constexpr (std::is_same_v<T, StageAckMsg>) {
          put_u32(out, m.stage_index);
          out.push_back(m.adopted ? 1 : 0);
        } else if constexpr (std::is_same_v<T, ErrorReplyMsg>) {
          put_u16(out, m.code);
          put_string(out, m.text);
        }
      },
      msg);
  return out;
}

Message decode_payload(uint8_t msg_type, std::span<const uint8_t> payload) {
  Reader r(payload);
  Message msg;
  switch (msg_type) {
    case kModelRequest: {
      ModelRequestMsg m;
      m.client_id = r.str();
      m.num_classes = r.u32();
      msg = std::move(m);
      break;
    }
    case kModelResponse: {
      ModelResponseMsg m;
      m.params = decode_params_from(r);
      msg = std::move(m);
      break;
    }
    case kUpdateSubmit: {
      UpdateSubmitMsg m;
      m.client_id = r.str();
      m.num_examples = r.u64();
      m.backbone = decode_params_from(r);
      msg = std::move(m);
      break;
    }
    case kStageAck: {
      StageAckMsg m;
      m.stage_index = r.u32();
      const uint8_t flag = r.u8();
      if (flag > 1) fail(ErrorCode::Format, "invalid adopted flag");
      m.adopted = flag == 1;
      msg = m;
      break;
    }
    case kErrorReply: {
      ErrorReplyMsg m;
      m.code = r.u16();
      m.text = r.str();
      msg = std::move(m);
      break;
    }
    default:
      fail(ErrorCode::Unsupported, "unknown message type " + std::to_string(msg_type));
  }
  r.expect_end();
  return msg;
}

}  // namespace

std::vector<uint8_t> encode_params(const ParameterSet& p) {
  std::vector<uint8_t> out;
  encode_params_into(out, p);
  return out;
}

ParameterSet decode_params(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  ParameterSet p = decode_params_from(r);
  r.expect_end();
  return p;
}

std::vector<uint8_t> encode_frame(const Message& msg) {
  const std::vector<uint8_t> payload = encode_payload(msg);
  std::vector<uint8_t> out;
  out.reserve(kHeaderSize + payload.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kVersion);
  out.push_back(msg_type_of(msg));
  put_u64(out, payload.size());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

DecodeResult decode_frame(std::span<const uint8_t> bytes) {
  DecodeResult result;
  if (bytes.size() < kHeaderSize) return result;  // NeedMoreBytes
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorCode::Protocol, "bad frame magic");
  }
  const uint8_t version = bytes[4];
  if (version != kVersion) {
    fail(ErrorCode::Unsupported, "unsupported frame version " + std::to_string(version));
  }
  const uint8_t msg_type = bytes[5];
  if (msg_type < kModelRequest || msg_type > kErrorReply) {
    fail(ErrorCode::Unsupported, "unknown message type " + std::to_string(msg_type));
  }
  uint64_t payload_len = 0;
  for (int i = 0; i < 8; ++i) {
    payload_len |= static_cast<uint64_t>(bytes[6 + i]) << (8 * i);
  }
  if (payload_len > bytes.size() - kHeaderSize) return result;  // NeedMoreBytes
  result.message = decode_payload(
      msg_type, bytes.subspan(kHeaderSize, static_cast<size_t>(payload_len)));
  result.status = DecodeResult::Status::Ok;
  result.consumed = kHeaderSize + static_cast<size_t>(payload_len);
  return result;
}

void save_checkpoint(const std::string& path, const ParameterSet& p) {
  const std::vector<uint8_t> frame = encode_frame(ModelResponseMsg{p});
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(frame.data()),
            static_cast<std::streamsize>(frame.size()));
  if (!out) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

ParameterSet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  const DecodeResult result = decode_frame(bytes);
  if (result.status != DecodeResult::Status::Ok) {
    fail(ErrorCode::Truncated, "incomplete checkpoint file '" + path + "'");
  }
  const auto* resp = std::get_if<ModelResponseMsg>(&result.message);
  if (resp == nullptr) fail(ErrorCode::Format, "checkpoint is not a model frame");
  return resp->params;
}

}  // namespace fedstage

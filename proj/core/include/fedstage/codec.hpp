#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedstage/protocol.hpp"
#include "fedstage/tensor.hpp"

namespace fedstage {

// Wire messages for the stage-wise protocol (Frame payloads).
struct ModelRequestMsg {
  std::string client_id;
  uint32_t num_classes = 0;
};

struct ModelResponseMsg {
  ParameterSet params;
};

struct UpdateSubmitMsg {
  std::string client_id;
  uint64_t num_examples = 0;
  ParameterSet backbone;
};

struct StageAckMsg {
  uint32_t stage_index = 0;
  bool adopted = false;
};

struct ErrorReplyMsg {
  uint16_t code = 0;
  std::string text;
};

using Message = std::variant<ModelRequestMsg, ModelResponseMsg, UpdateSubmitMsg,
                             StageAckMsg, ErrorReplyMsg>;

// Canonical parameter encoding: layout header (entry count u32 LE; per entry
// name length u16 LE + name bytes, dim count u8, dims u32 LE each) followed
// by the values as IEEE-754 binary64 LE.
std::vector<uint8_t> encode_params(const ParameterSet& p);
ParameterSet decode_params(std::span<const uint8_t> bytes);

// Frame: "FEDU" magic, version byte (1), msg_type byte, payload length
// u64 LE, payload.
std::vector<uint8_t> encode_frame(const Message& msg);

struct DecodeResult {
  enum class Status { Ok, NeedMoreBytes };
  Status status = Status::NeedMoreBytes;
  Message message;
  size_t consumed = 0;
};

// Streaming-safe: a partial frame yields NeedMoreBytes rather than an error.
// Malformed input throws FedError (Protocol / Unsupported / Truncated /
// Format), never crashes.
DecodeResult decode_frame(std::span<const uint8_t> bytes);

// Checkpoint files are a single ModelResponse frame on disk.
void save_checkpoint(const std::string& path, const ParameterSet& p);
ParameterSet load_checkpoint(const std::string& path);

}  // namespace fedstage

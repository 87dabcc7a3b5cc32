#pragma once

// Wire protocol between the simulator (client) and the vision host (server).
//
// Frame layout, all multi-byte fields big-endian:
//   'S' 'C' | version (0x01) | msg_type | payload length (u32) | payload | crc32(payload) (u32)
//
// After any protocol error the connection is closed; the stream is never
// resynchronized.

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppasim/bnn.hpp"
#include "ppasim/image.hpp"

namespace ppasim::bridge {

inline constexpr std::uint8_t kMagic0 = 'S';
inline constexpr std::uint8_t kMagic1 = 'C';
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 8;
inline constexpr std::size_t kCrcSize = 4;
inline constexpr std::size_t kMaxPayload = std::size_t{1} << 20;
inline constexpr int kMaxFrameSide = 256;

enum class MsgType : std::uint8_t {
    Frame = 0x01,
    Prediction = 0x02,
    Hello = 0x03,
    Bye = 0x04,
    Error = 0x05,
};

struct WireMessage {
    MsgType type = MsgType::Hello;
    std::vector<std::uint8_t> payload;

    bool operator==(const WireMessage&) const = default;
};

// IEEE 802.3 CRC-32 (the zlib polynomial).
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode(const WireMessage& msg);

struct DecodeResult {
    std::optional<WireMessage> message;  // empty: need more bytes
    std::size_t consumed = 0;

    bool need_more() const { return !message.has_value(); }
};

// Decodes the first frame of `stream`. Throws ProtocolError on bad magic,
// version, type or length and CorruptionError on a CRC mismatch.
DecodeResult decode(std::span<const std::uint8_t> stream);

struct FramePayload {
    std::uint32_t frame_id = 0;
    std::uint16_t width = 0;
    std::uint16_t height = 0;
    std::vector<std::uint8_t> pixels;

    static FramePayload from_image(std::uint32_t frame_id, const GrayImage& img);
    GrayImage to_image() const;
    bool operator==(const FramePayload&) const = default;
};

struct PredictionPayload {
    std::uint32_t frame_id = 0;
    std::array<std::int16_t, bnn::kLabels> scores_x{};
    std::array<std::int16_t, bnn::kLabels> scores_y{};
    std::uint8_t label_x = 0;
    std::uint8_t label_y = 0;

    static PredictionPayload from_distribution(std::uint32_t frame_id, const bnn::PredictionDistribution& d);
    bnn::PredictionDistribution to_distribution() const;
    bool operator==(const PredictionPayload&) const = default;
};

std::vector<std::uint8_t> encode_frame(const FramePayload& f);
FramePayload decode_frame(std::span<const std::uint8_t> payload);
std::vector<std::uint8_t> encode_prediction(const PredictionPayload& p);
// Rejects payloads whose labels are not the argmax of their scores.
PredictionPayload decode_prediction(std::span<const std::uint8_t> payload);

WireMessage frame_message(const FramePayload& f);
WireMessage prediction_message(const PredictionPayload& p);
WireMessage hello_message();
WireMessage bye_message();
WireMessage error_message(const std::string& text);

struct Address {
    std::string host = "127.0.0.1";
    std::uint16_t port = 5757;

    std::string to_string() const;
};

// "host:port"
Address parse_address(const std::string& text);

using FrameHandler = std::function<bnn::PredictionDistribution(const GrayImage&)>;

// Single-client request-reply host. Construction binds and listens; run()
// serves connections one at a time until stop() is called.
class VisionHost {
public:
    VisionHost(const Address& address, FrameHandler handler);
    ~VisionHost();
    VisionHost(const VisionHost&) = delete;
    VisionHost& operator=(const VisionHost&) = delete;

    std::uint16_t port() const { return port_; }
    void run();
    // Safe to call from another thread.
    void stop() { stopping_ = true; }

    std::uint64_t frames_served() const { return frames_served_; }

private:
    void serve_connection(int fd);

    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    FrameHandler handler_;
    std::atomic<bool> stopping_{false};
    std::atomic<std::uint64_t> frames_served_{0};
};

struct LatencySample {
    std::uint32_t frame_id = 0;
    std::int64_t micros = 0;
};

struct LatencySummary {
    double p50_us = 0.0;
    double p99_us = 0.0;
    std::size_t count = 0;
};

LatencySummary summarize_latency(std::span<const LatencySample> log);
std::string latency_csv(std::span<const LatencySample> log);

// Blocking client side of the protocol. Not thread-safe; callers on several
// threads must serialize access.
class HostConnection {
public:
    static HostConnection connect(const Address& address,
                                  std::chrono::milliseconds timeout = std::chrono::seconds(2));
    ~HostConnection();
    HostConnection(HostConnection&& other) noexcept;
    HostConnection& operator=(HostConnection&& other) noexcept;
    HostConnection(const HostConnection&) = delete;
    HostConnection& operator=(const HostConnection&) = delete;

    // Sends FRAME, waits for the matching PREDICTION. Records latency.
    PredictionPayload request_prediction(const FramePayload& frame);
    void hello();
    void bye();

    void send_raw(std::span<const std::uint8_t> bytes);
    WireMessage receive();

    const std::vector<LatencySample>& latency_log() const { return latency_; }

private:
    HostConnection(int fd, std::chrono::milliseconds timeout) : fd_(fd), timeout_(timeout) {}
    void close();

    int fd_ = -1;
    std::chrono::milliseconds timeout_;
    std::vector<std::uint8_t> buffer_;
    std::vector<LatencySample> latency_;
};

}  // namespace ppasim::bridge

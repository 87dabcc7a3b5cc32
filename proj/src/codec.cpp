#include <zlib.h>

#include <algorithm>
#include <limits>

#include "ppasim/bridge.hpp"
#include "ppasim/errors.hpp"

namespace ppasim::bridge {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    return (static_cast<std::uint32_t>(b[at]) << 24) | (static_cast<std::uint32_t>(b[at + 1]) << 16) |
           (static_cast<std::uint32_t>(b[at + 2]) << 8) | static_cast<std::uint32_t>(b[at + 3]);
}

bool known_type(std::uint8_t t) { return t >= 0x01 && t <= 0x05; }

constexpr std::size_t kPredictionSize = 4 + 2 * 2 * bnn::kLabels + 2;

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; payloads are capped well below that.
    crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode(const WireMessage& msg) {
    if (!known_type(static_cast<std::uint8_t>(msg.type))) throw ProtocolError("unknown message type");
    if (msg.payload.size() > kMaxPayload) throw ProtocolError("payload exceeds 1 MiB");
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderSize + msg.payload.size() + kCrcSize);
    out.push_back(kMagic0);
    out.push_back(kMagic1);
    out.push_back(kVersion);
    out.push_back(static_cast<std::uint8_t>(msg.type));
    put_u32(out, static_cast<std::uint32_t>(msg.payload.size()));
    out.insert(out.end(), msg.payload.begin(), msg.payload.end());
    put_u32(out, crc32(msg.payload));
    return out;
}

DecodeResult decode(std::span<const std::uint8_t> stream) {
    const std::size_t n = stream.size();
    // Reject as early as the available bytes allow.
    if (n >= 1 && stream[0] != kMagic0) throw ProtocolError("bad magic");
    if (n >= 2 && stream[1] != kMagic1) throw ProtocolError("bad magic");
    if (n >= 3 && stream[2] != kVersion) throw ProtocolError("unsupported version " + std::to_string(stream[2]));
    if (n >= 4 && !known_type(stream[3])) throw ProtocolError("unknown message type " + std::to_string(stream[3]));
    if (n < kHeaderSize) return {};

    const std::uint32_t length = get_u32(stream, 4);
    if (length > kMaxPayload) throw ProtocolError("declared payload length exceeds 1 MiB");
    const std::size_t total = kHeaderSize + length + kCrcSize;
    if (n < total) return {};

    const auto payload = stream.subspan(kHeaderSize, length);
    const std::uint32_t expected = get_u32(stream, kHeaderSize + length);
    if (crc32(payload) != expected) throw CorruptionError("crc mismatch");

    DecodeResult r;
    r.message = WireMessage{static_cast<MsgType>(stream[3]), {payload.begin(), payload.end()}};
    r.consumed = total;
    return r;
}

FramePayload FramePayload::from_image(std::uint32_t frame_id, const GrayImage& img) {
    if (img.width <= 0 || img.height <= 0 || img.width > kMaxFrameSide || img.height > kMaxFrameSide) {
        throw ShapeError("frame dimensions must be within 1..256");
    }
    FramePayload f;
    f.frame_id = frame_id;
    f.width = static_cast<std::uint16_t>(img.width);
    f.height = static_cast<std::uint16_t>(img.height);
    f.pixels = img.pixels;
    return f;
}

GrayImage FramePayload::to_image() const {
    GrayImage img(width, height);
    img.pixels = pixels;
    return img;
}

std::vector<std::uint8_t> encode_frame(const FramePayload& f) {
    if (f.width == 0 || f.height == 0 || f.width > kMaxFrameSide || f.height > kMaxFrameSide) {
        throw ProtocolError("frame dimensions must be within 1..256");
    }
    if (f.pixels.size() != static_cast<std::size_t>(f.width) * f.height) {
        throw ProtocolError("frame pixel count does not match its dimensions");
    }
    std::vector<std::uint8_t> out;
    out.reserve(8 + f.pixels.size());
    put_u32(out, f.frame_id);
    put_u16(out, f.width);
    put_u16(out, f.height);
    out.insert(out.end(), f.pixels.begin(), f.pixels.end());
    return out;
}

FramePayload decode_frame(std::span<const std::uint8_t> payload) {
    if (payload.size() < 8) throw ProtocolError("frame payload too short");
    FramePayload f;
    f.frame_id = get_u32(payload, 0);
    f.width = get_u16(payload, 4);
    f.height = get_u16(payload, 6);
    if (f.width == 0 || f.height == 0 || f.width > kMaxFrameSide || f.height > kMaxFrameSide) {
        throw ProtocolError("frame dimensions must be within 1..256");
    }
    if (payload.size() != 8 + static_cast<std::size_t>(f.width) * f.height) {
        throw ProtocolError("frame payload size does not match its dimensions");
    }
    f.pixels.assign(payload.begin() + 8, payload.end());
    return f;
}

PredictionPayload PredictionPayload::from_distribution(std::uint32_t frame_id, const bnn::PredictionDistribution& d) {
    PredictionPayload p;
    p.frame_id = frame_id;
    auto narrow = [](int v) {
        if (v < std::numeric_limits<std::int16_t>::min() || v > std::numeric_limits<std::int16_t>::max()) {
            throw RangeError("score does not fit in 16 bits");
        }
        return static_cast<std::int16_t>(v);
    };
    for (int o = 0; o < bnn::kLabels; ++o) {
        p.scores_x[o] = narrow(d.scores_x[o]);
        p.scores_y[o] = narrow(d.scores_y[o]);
    }
    p.label_x = static_cast<std::uint8_t>(d.label_x);
    p.label_y = static_cast<std::uint8_t>(d.label_y);
    return p;
}

bnn::PredictionDistribution PredictionPayload::to_distribution() const {
    bnn::PredictionDistribution d;
    std::copy(scores_x.begin(), scores_x.end(), d.scores_x.begin());
    std::copy(scores_y.begin(), scores_y.end(), d.scores_y.begin());
    d.label_x = label_x;
    d.label_y = label_y;
    return d;
}

std::vector<std::uint8_t> encode_prediction(const PredictionPayload& p) {
    std::vector<std::uint8_t> out;
    out.reserve(kPredictionSize);
    put_u32(out, p.frame_id);
    for (auto s : p.scores_x) put_u16(out, static_cast<std::uint16_t>(s));
    for (auto s : p.scores_y) put_u16(out, static_cast<std::uint16_t>(s));
    out.push_back(p.label_x);
    out.push_back(p.label_y);
    return out;
}

PredictionPayload decode_prediction(std::span<const std::uint8_t> payload) {
    if (payload.size() != kPredictionSize) throw ProtocolError("prediction payload has wrong size");
    PredictionPayload p;
    p.frame_id = get_u32(payload, 0);
    std::size_t at = 4;
    std::array<int, bnn::kLabels> sx{}, sy{};
    for (int o = 0; o < bnn::kLabels; ++o, at += 2) {
        p.scores_x[o] = static_cast<std::int16_t>(get_u16(payload, at));
        sx[o] = p.scores_x[o];
    }
    for (int o = 0; o < bnn::kLabels; ++o, at += 2) {
        p.scores_y[o] = static_cast<std::int16_t>(get_u16(payload, at));
        sy[o] = p.scores_y[o];
    }
    p.label_x = payload[at];
    p.label_y = payload[at + 1];
    if (p.label_x != bnn::argmax_lowest(sx) || p.label_y != bnn::argmax_lowest(sy)) {
        throw ProtocolError("prediction labels disagree with the argmax of their scores");
    }
    return p;
}

WireMessage frame_message(const FramePayload& f) { return {MsgType::Frame, encode_frame(f)}; }
WireMessage prediction_message(const PredictionPayload& p) { return {MsgType::Prediction, encode_prediction(p)}; }
WireMessage hello_message() { return {MsgType::Hello, {}}; }
WireMessage bye_message() { return {MsgType::Bye, {}}; }

WireMessage error_message(const std::string& text) {
    std::string t = text.substr(0, 1024);
    return {MsgType::Error, {t.begin(), t.end()}};
}

std::string Address::to_string() const { return host + ":" + std::to_string(port); }

Address parse_address(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
        throw ConfigError("address must look like host:port, got '" + text + "'");
    }
    Address a;
    a.host = text.substr(0, colon);
    const std::string port = text.substr(colon + 1);
    if (!std::all_of(port.begin(), port.end(), [](char c) { return c >= '0' && c <= '9'; }) || port.size() > 5) {
        throw ConfigError("invalid port in address '" + text + "'");
    }
    const long v = std::stol(port);
    if (v > 65535) throw ConfigError("port out of range in '" + text + "'");
    a.port = static_cast<std::uint16_t>(v);
    return a;
}

}  // namespace ppasim::bridge

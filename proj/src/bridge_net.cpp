#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <sstream>
#include <utility>

#include "ppasim/bridge.hpp"
#include "ppasim/errors.hpp"

namespace ppasim::bridge {

namespace {

constexpr int kPollSliceMs = 100;

class Fd {
public:
    explicit Fd(int fd = -1) : fd_(fd) {}
    ~Fd() {
        if (fd_ >= 0) ::close(fd_);
    }
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    int get() const { return fd_; }
    int release() { return std::exchange(fd_, -1); }

private:
    int fd_;
};

void send_all(int fd, std::span<const std::uint8_t> bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw DisconnectError(std::string("send failed: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
}

void send_message(int fd, const WireMessage& msg) { send_all(fd, encode(msg)); }

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

addrinfo* resolve(const Address& address, bool passive) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(address.port);
    const int rc = ::getaddrinfo(address.host.c_str(), port.c_str(), &hints, &res);
    if (rc != 0) throw ConfigError("cannot resolve " + address.to_string() + ": " + ::gai_strerror(rc));
    return res;
}

}  // namespace

VisionHost::VisionHost(const Address& address, FrameHandler handler) : handler_(std::move(handler)) {
    addrinfo* res = nullptr;
    try {
        res = resolve(address, true);
    } catch (const ConfigError& e) {
        throw StartupError(e.what());
    }
    Fd fd(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    if (fd.get() < 0) {
        ::freeaddrinfo(res);
        throw StartupError(std::string("socket: ") + std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const int brc = ::bind(fd.get(), res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (brc != 0) throw StartupError("bind " + address.to_string() + ": " + std::strerror(errno));
    if (::listen(fd.get(), 1) != 0) throw StartupError(std::string("listen: ") + std::strerror(errno));

    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
    listen_fd_ = fd.release();
}

VisionHost::~VisionHost() {
    if (listen_fd_ >= 0) ::close(listen_fd_);
}

void VisionHost::run() {
    while (!stopping_) {
        pollfd p{listen_fd_, POLLIN, 0};
        const int rc = ::poll(&p, 1, kPollSliceMs);
        if (rc <= 0) continue;
        const int client = ::accept(listen_fd_, nullptr, nullptr);
        if (client < 0) continue;
        Fd guard(client);
        set_nodelay(client);
        serve_connection(client);
    }
}

void VisionHost::serve_connection(int fd) {
    std::vector<std::uint8_t> buffer;
    std::array<std::uint8_t, 16384> chunk{};
    auto fail = [&](const std::string& why) {
        try {
            send_message(fd, error_message(why));
        } catch (const Error&) {
        }
    };

    while (!stopping_) {
        pollfd p{fd, POLLIN, 0};
        const int rc = ::poll(&p, 1, kPollSliceMs);
        if (rc == 0) continue;
        if (rc < 0) {
            if (errno == EINTR) continue;
            return;
        }
        const ssize_t n = ::recv(fd, chunk.data(), chunk.size(), 0);
        if (n <= 0) return;
        buffer.insert(buffer.end(), chunk.begin(), chunk.begin() + n);

        try {
            while (true) {
                const auto r = decode(buffer);
                if (r.need_more()) break;
                buffer.erase(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(r.consumed));
                const auto& msg = *r.message;
                switch (msg.type) {
                    case MsgType::Hello:
                        send_message(fd, hello_message());
                        break;
                    case MsgType::Bye:
                        send_message(fd, bye_message());
                        return;
                    case MsgType::Frame: {
                        const auto frame = decode_frame(msg.payload);
                        const auto dist = handler_(frame.to_image());
                        send_message(fd, prediction_message(PredictionPayload::from_distribution(frame.frame_id, dist)));
                        ++frames_served_;
                        break;
                    }
                    case MsgType::Prediction:
                    case MsgType::Error:
                        fail("unexpected message type from client");
                        return;
                }
            }
        } catch (const DisconnectError&) {
            return;
        } catch (const std::exception& e) {
            fail(e.what());
            return;
        }
    }
}

LatencySummary summarize_latency(std::span<const LatencySample> log) {
    LatencySummary s;
    s.count = log.size();
    if (log.empty()) return s;
    std::vector<std::int64_t> v;
    v.reserve(log.size());
    for (const auto& l : log) v.push_back(l.micros);
    std::sort(v.begin(), v.end());
    // Nearest-rank percentiles.
    auto rank = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
        return static_cast<double>(v[std::clamp<std::size_t>(idx, 1, v.size()) - 1]);
    };
    s.p50_us = rank(0.50);
    s.p99_us = rank(0.99);
    return s;
}

std::string latency_csv(std::span<const LatencySample> log) {
    std::ostringstream out;
    out << "frame_id,micros\n";
    for (const auto& l : log) out << l.frame_id << "," << l.micros << "\n";
    return out.str();
}

HostConnection HostConnection::connect(const Address& address, std::chrono::milliseconds timeout) {
    addrinfo* res = resolve(address, false);
    Fd fd(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    if (fd.get() < 0) {
        ::freeaddrinfo(res);
        throw DisconnectError(std::string("socket: ") + std::strerror(errno));
    }
    const int rc = ::connect(fd.get(), res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (rc != 0) throw DisconnectError("connect " + address.to_string() + ": " + std::strerror(errno));
    set_nodelay(fd.get());
    return HostConnection(fd.release(), timeout);
}

HostConnection::~HostConnection() { close(); }

HostConnection::HostConnection(HostConnection&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)),
      timeout_(other.timeout_),
      buffer_(std::move(other.buffer_)),
      latency_(std::move(other.latency_)) {}

HostConnection& HostConnection::operator=(HostConnection&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = std::exchange(other.fd_, -1);
        timeout_ = other.timeout_;
        buffer_ = std::move(other.buffer_);
        latency_ = std::move(other.latency_);
    }
    return *this;
}

void HostConnection::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void HostConnection::send_raw(std::span<const std::uint8_t> bytes) {
    if (fd_ < 0) throw DisconnectError("connection is closed");
    send_all(fd_, bytes);
}

WireMessage HostConnection::receive() {
    if (fd_ < 0) throw DisconnectError("connection is closed");
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    std::array<std::uint8_t, 16384> chunk{};
    while (true) {
        DecodeResult r;
        try {
            r = decode(buffer_);
        } catch (const ProtocolError&) {
            close();
            throw;
        }
        if (!r.need_more()) {
            buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(r.consumed));
            return std::move(*r.message);
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline -
                                                                                std::chrono::steady_clock::now());
        if (left.count() <= 0) throw TimeoutError("no reply within " + std::to_string(timeout_.count()) + " ms");
        pollfd p{fd_, POLLIN, 0};
        const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
        if (rc == 0) throw TimeoutError("no reply within " + std::to_string(timeout_.count()) + " ms");
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw DisconnectError(std::string("poll: ") + std::strerror(errno));
        }
        const ssize_t n = ::recv(fd_, chunk.data(), chunk.size(), 0);
        if (n <= 0) {
            close();
            throw DisconnectError("host closed the connection");
        }
        buffer_.insert(buffer_.end(), chunk.begin(), chunk.begin() + n);
    }
}

PredictionPayload HostConnection::request_prediction(const FramePayload& frame) {
    const auto t0 = std::chrono::steady_clock::now();
    send_raw(encode(frame_message(frame)));
    const auto reply = receive();
    const auto t1 = std::chrono::steady_clock::now();
    if (reply.type == MsgType::Error) {
        close();
        throw ProtocolError("host reported: " + std::string(reply.payload.begin(), reply.payload.end()));
    }
    if (reply.type != MsgType::Prediction) {
        close();
        throw ProtocolError("expected PREDICTION reply");
    }
    auto p = decode_prediction(reply.payload);
    if (p.frame_id != frame.frame_id) {
        close();
        throw ProtocolError("reply frame_id " + std::to_string(p.frame_id) + " does not match request " +
                            std::to_string(frame.frame_id));
    }
    latency_.push_back({frame.frame_id, std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count()});
    return p;
}

void HostConnection::hello() {
    send_raw(encode(hello_message()));
    const auto reply = receive();
    if (reply.type != MsgType::Hello) throw ProtocolError("expected HELLO reply");
}

void HostConnection::bye() {
    send_raw(encode(bye_message()));
    try {
        (void)receive();
    } catch (const DisconnectError&) {
    }
    close();
}

}  // namespace ppasim::bridge

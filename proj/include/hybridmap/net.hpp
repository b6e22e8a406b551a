#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "hybridmap/transport.hpp"

namespace hmap {

/// Connected TCP socket.
class TcpStream : public ByteStream {
public:
    explicit TcpStream(int fd) : fd_(fd) {}
    ~TcpStream() override;
    TcpStream(const TcpStream&) = delete;
    TcpStream& operator=(const TcpStream&) = delete;

    /// Throws IoError when the connection cannot be established.
    static std::unique_ptr<TcpStream> connect(const std::string& host, std::uint16_t port);

    void write(std::span<const std::uint8_t> bytes) override;
    std::size_t read(std::span<std::uint8_t> buffer) override;
    void close_write() override;

private:
    int fd_;
};

class TcpListener {
public:
    /// Binds host:port (port 0 picks a free port).
    TcpListener(const std::string& host, std::uint16_t port);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const { return port_; }
    std::unique_ptr<TcpStream> accept();

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

} // namespace hmap

#pragma once

#include <cstdint>
#include <string>

namespace ammu {

/// RAII measurement scope for multiply-accumulate counts. Scopes nest, and a
/// recorded count lands in every scope active on the calling thread, so an
/// outer scope sees the sum of its inner ones. Two live scopes with the same
/// name on one thread are rejected.
class MacScope {
  public:
    explicit MacScope(std::string name);
    ~MacScope();

    MacScope(const MacScope&) = delete;
    MacScope& operator=(const MacScope&) = delete;

    const std::string& name() const { return name_; }
    std::uint64_t macs() const { return macs_; }

  private:
    friend void mac_record(std::uint64_t n);
    std::string name_;
    std::uint64_t macs_ = 0;
    MacScope* parent_ = nullptr;
};

/// Adds n MACs to every scope active on this thread. No-op without a scope.
/// Kernels call this once per primitive with the closed-form count, from the
/// thread that entered the kernel, never from inside a parallel region.
void mac_record(std::uint64_t n);

/// True when at least one scope is active on this thread.
bool mac_scope_active();

}  // namespace ammu

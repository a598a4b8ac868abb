#include "ammu/mac_counter.hpp"

#include <stdexcept>

namespace ammu {

namespace {
thread_local MacScope* g_innermost = nullptr;
}

MacScope::MacScope(std::string name) : name_(std::move(name)) {
    for (MacScope* s = g_innermost; s != nullptr; s = s->parent_) {
        if (s->name_ == name_) {
            throw std::logic_error("mac scope '" + name_ + "' is already active on this thread");
        }
    }
    parent_ = g_innermost;
    g_innermost = this;
}

MacScope::~MacScope() {
    g_innermost = parent_;
}

void mac_record(std::uint64_t n) {
    for (MacScope* s = g_innermost; s != nullptr; s = s->parent_) {
        s->macs_ += n;
    }
}

bool mac_scope_active() {
    return g_innermost != nullptr;
}

}  // namespace ammu

#include "quite/membuf.hpp"

#include <stdexcept>

namespace quite::membuf {

std::string_view to_string(SliceKind kind) noexcept {
    switch (kind) {
        case SliceKind::query_info: return "query_info";
        case SliceKind::plan_summary: return "plan_summary";
        case SliceKind::rewrite_proposals: return "rewrite_proposals";
        case SliceKind::retrieved_knowledge: return "retrieved_knowledge";
        case SliceKind::decision_report: return "decision_report";
    }
    return "query_info";
}

std::string_view to_string(AgentRole role) noexcept {
    switch (role) {
        case AgentRole::reasoning: return "reasoning";
        case AgentRole::rewrite: return "rewrite";
        case AgentRole::assistant: return "assistant";
        case AgentRole::decision: return "decision";
    }
    return "reasoning";
}

bool role_reads(AgentRole role, SliceKind kind) noexcept {
    switch (role) {
        case AgentRole::reasoning: return true;
        case AgentRole::rewrite: return kind != SliceKind::decision_report;
        case AgentRole::assistant: return kind == SliceKind::query_info;
        case AgentRole::decision:
            return kind == SliceKind::query_info || kind == SliceKind::rewrite_proposals ||
                   kind == SliceKind::retrieved_knowledge || kind == SliceKind::decision_report;
    }
    return false;
}

namespace {

std::string header(SliceKind kind) { return "[" + std::string(to_string(kind)) + "]\n"; }

constexpr std::size_t kLongestHeader = sizeof("[retrieved_knowledge]\n") - 1;
constexpr std::size_t kSeparator = 2;

}  // namespace

MemoryBuffer::MemoryBuffer(std::size_t slice_cap) : cap_(slice_cap) {
    if (cap_ < kLongestHeader + kSeparator + kTruncationMarker.size() + 1)
        throw std::invalid_argument("slice cap too small to hold a header and a truncation marker");
}

MemoryBuffer& MemoryBuffer::put(SliceKind kind, std::string_view content, int iteration) {
    const std::size_t budget = cap_ - header(kind).size() - kSeparator;
    std::string stored;
    if (content.size() <= budget) {
        stored = content;
    } else {
        const std::size_t keep = budget - kTruncationMarker.size();
        stored.reserve(budget);
        stored.append(kTruncationMarker);
        stored.append(content.substr(content.size() - keep));
    }
    slices_[kind] = MemorySlice{kind, std::move(stored), iteration};
    return *this;
}

bool MemoryBuffer::erase(SliceKind kind) { return slices_.erase(kind) > 0; }

const MemorySlice* MemoryBuffer::get(SliceKind kind) const {
    auto it = slices_.find(kind);
    return it == slices_.end() ? nullptr : &it->second;
}

std::string MemoryBuffer::render(AgentRole role) const {
    std::string out;
    for (SliceKind kind : kSliceOrder) {
        if (!role_reads(role, kind)) continue;
        const auto* s = get(kind);
        if (!s) continue;
        if (!out.empty()) out += "\n\n";
        out += header(kind);
        out += s->content;
    }
    return out;
}

std::string MemoryBuffer::render_all() const { return render(AgentRole::reasoning); }

std::size_t MemoryBuffer::render_bound() const noexcept { return kSliceOrder.size() * cap_; }

}  // namespace quite::membuf

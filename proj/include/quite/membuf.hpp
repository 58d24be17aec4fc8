#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>

// Typed memory slices shared between agents. Each kind holds only its latest
// content, so prompts stay bounded no matter how many iterations run.
namespace quite::membuf {

enum class SliceKind { query_info, plan_summary, rewrite_proposals, retrieved_knowledge, decision_report };

/// Rendering order.
inline constexpr std::array<SliceKind, 5> kSliceOrder = {SliceKind::query_info, SliceKind::plan_summary,
                                                         SliceKind::rewrite_proposals, SliceKind::retrieved_knowledge,
                                                         SliceKind::decision_report};

std::string_view to_string(SliceKind kind) noexcept;

enum class AgentRole { reasoning, rewrite, assistant, decision };

std::string_view to_string(AgentRole role) noexcept;

struct MemorySlice {
    SliceKind kind = SliceKind::query_info;
    std::string content;
    int updated_at_iteration = 0;

    friend bool operator==(const MemorySlice&, const MemorySlice&) = default;
};

inline constexpr std::size_t kDefaultSliceCap = 4000;
inline constexpr std::string_view kTruncationMarker = "[...truncated...]\n";

class MemoryBuffer {
public:
    explicit MemoryBuffer(std::size_t slice_cap = kDefaultSliceCap);

    /// Replaces the slice of that kind. Content longer than the cap keeps its
    /// tail, prefixed by the truncation marker, so that the rendered section
    /// with its header and separator fits the cap.
    MemoryBuffer& put(SliceKind kind, std::string_view content, int iteration);
    bool erase(SliceKind kind);

    [[nodiscard]] const MemorySlice* get(SliceKind kind) const;
    [[nodiscard]] std::size_t size() const noexcept { return slices_.size(); }
    [[nodiscard]] bool empty() const noexcept { return slices_.empty(); }
    [[nodiscard]] std::size_t slice_cap() const noexcept { return cap_; }

    /// Slices relevant to `role`, in kSliceOrder, each as "[kind]\n<content>",
    /// separated by blank lines. Absent slices leave no trace.
    [[nodiscard]] std::string render(AgentRole role) const;
    /// Every slice regardless of role.
    [[nodiscard]] std::string render_all() const;

    /// Upper bound on render() for any role.
    [[nodiscard]] std::size_t render_bound() const noexcept;

    friend bool operator==(const MemoryBuffer&, const MemoryBuffer&) = default;

private:
    std::size_t cap_;
    std::map<SliceKind, MemorySlice> slices_;
};

/// Whether `role` reads slices of `kind`.
[[nodiscard]] bool role_reads(AgentRole role, SliceKind kind) noexcept;

}  // namespace quite::membuf

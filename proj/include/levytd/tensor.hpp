#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace levytd {

/// Allocator whose value-less construct leaves doubles uninitialised, so
/// resize() on fresh buffers skips the zero fill. Blocks are 64-byte aligned:
/// vectorised reductions split work by address, so alignment that varied with
/// heap state would change results in the last bits.
template <class T>
struct DefaultInitAllocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = DefaultInitAllocator<U>;
    };
    DefaultInitAllocator() = default;
    template <class U>
    DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

    static constexpr std::align_val_t kAlignment{64};
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

    template <class U>
    void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

using Storage = std::vector<double, DefaultInitAllocator<double>>;

/// Dense row-major array of doubles.
///
/// Rank 0 is a scalar, rank 1 a vector, rank 2 a matrix. Operations in the
/// autodiff engine only use ranks up to 2.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double value) { return Tensor({}, std::vector<double>{value}); }
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }
    static Tensor identity(std::size_t n);
    /// Contents unspecified; for outputs that are overwritten in full.
    static Tensor uninitialized(std::vector<std::size_t> shape);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    /// Leading extent; 1 for scalars.
    std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
    /// Trailing extent of a matrix; 1 for vectors and scalars.
    std::size_t cols() const noexcept { return shape_.size() == 2 ? shape_[1] : 1; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    Storage& storage() noexcept { return data_; }
    const Storage& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    /// The single element of a size-1 tensor.
    double item() const;
    bool empty() const noexcept { return data_.empty() && shape_.empty(); }
    bool all_finite() const noexcept;

    std::string shape_string() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    Storage data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace levytd

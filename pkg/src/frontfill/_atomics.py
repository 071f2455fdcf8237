"""Atomic primitives for int64 numpy arrays, usable inside nopython kernels.

The tree kernels publish leaf contents by storing the point count with
release ordering after the element writes, and readers load the count with
acquire ordering before touching elements. Index allocation (points, nodes,
slot blocks) is a monotonic atomic fetch-add so concurrent inserters never
hand out the same slot twice.
"""

from numba import types
from numba.core import cgutils
from numba.extending import intrinsic

__all__ = ["fetch_add", "load_acquire", "store_release"]


@intrinsic
def fetch_add(typingctx, arr_t, idx_t, val_t):
    """Atomically add ``val`` to ``arr[idx]`` and return the previous value."""
    if not (isinstance(arr_t, types.Array) and arr_t.dtype == types.int64):
        return None
    sig = types.int64(arr_t, types.intp, types.int64)

    def codegen(context, builder, signature, args):
        arr, idx, val = args
        ary = context.make_array(signature.args[0])(context, builder, arr)
        ptr = cgutils.get_item_pointer(
            context, builder, signature.args[0], ary, [idx], wraparound=False
        )
        return builder.atomic_rmw("add", ptr, val, "monotonic")

    return sig, codegen


@intrinsic
def load_acquire(typingctx, arr_t, idx_t):
    """Load ``arr[idx]`` with acquire ordering."""
    if not (isinstance(arr_t, types.Array) and arr_t.dtype == types.int64):
        return None
    sig = types.int64(arr_t, types.intp)

    def codegen(context, builder, signature, args):
        arr, idx = args
        ary = context.make_array(signature.args[0])(context, builder, arr)
        ptr = cgutils.get_item_pointer(
            context, builder, signature.args[0], ary, [idx], wraparound=False
        )
        return builder.load_atomic(ptr, ordering="acquire", align=8)

    return sig, codegen


@intrinsic
def store_release(typingctx, arr_t, idx_t, val_t):
    """Store ``val`` into ``arr[idx]`` with release ordering."""
    if not (isinstance(arr_t, types.Array) and arr_t.dtype == types.int64):
        return None
    sig = types.void(arr_t, types.intp, types.int64)

    def codegen(context, builder, signature, args):
        arr, idx, val = args
        ary = context.make_array(signature.args[0])(context, builder, arr)
        ptr = cgutils.get_item_pointer(
            context, builder, signature.args[0], ary, [idx], wraparound=False
        )
        builder.store_atomic(val, ptr, ordering="release", align=8)
        return context.get_dummy_value()

    return sig, codegen

"""Check every analytic gradient against central finite differences.

The tiny profile keeps the check fast.  The second half shows the
checker catching a backward rule that is off by ten percent.
"""

from aln.gradcheck import batch_gradients, gradcheck, tiny_instance

print(f"{'variant':<16}{'alpha':>6}  {'worst tensor':<14}{'max rel err':>12}")
for variant in ("baseline2", "aln_linguistic", "aln"):
    for alpha in (0.0, 0.5, 0.8, 1.0):
        params, batch = tiny_instance(variant, seed=0)
        report = gradcheck(params, batch, 1e-3, alpha=alpha)
        name = max(report.max_rel_error, key=report.max_rel_error.get)
        print(f"{variant:<16}{alpha:>6}  {name:<14}{report.max_rel_error[name]:>12.2e}")


def off_by_ten_percent(params, batch, alpha):
    grads = batch_gradients(params, batch, alpha)
    grads["attn_v_w"] = grads["attn_v_w"] * 1.1
    return grads


params, batch = tiny_instance("aln", seed=3)
report = gradcheck(params, batch, 1e-3, alpha=0.5, grad_fn=off_by_ten_percent)
print(f"\nwith a corrupted value-projection gradient, failing tensors: {report.failed}")

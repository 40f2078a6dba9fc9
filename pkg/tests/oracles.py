"""Independent brute-force implementations used as test oracles.

Everything here is written with plain Python loops, deliberately not sharing
code paths with the library, so agreement is meaningful.
"""


def rle_counts_scan(mask) -> list[int]:
    """Column-major run lengths by direct scan, leading background count."""
    seq = []
    for x in range(mask.width):
        for y in range(mask.height):
            seq.append(bool(mask.bits[y, x]))
    counts = []
    current = False  # runs start with background
    run = 0
    for bit in seq:
        if bit == current:
            run += 1
        else:
            counts.append(run)
            current = bit
            run = 1
    counts.append(run)
    return counts


def bbox_scan(mask):
    """(x1, y1, x2, y2) by exhaustive min/max over on-pixels, or None."""
    xs, ys = [], []
    for y in range(mask.height):
        for x in range(mask.width):
            if mask.bits[y, x]:
                xs.append(x)
                ys.append(y)
    if not xs:
        return None
    return (min(xs), min(ys), max(xs), max(ys))


def iou_count(a, b) -> float:
    inter = union = 0
    for y in range(a.height):
        for x in range(a.width):
            pa = bool(a.bits[y, x])
            pb = bool(b.bits[y, x])
            inter += pa and pb
            union += pa or pb
    if union == 0:
        return 1.0
    return inter / union


def region_rule_pixels(scene, box, points):
    """Per-pixel evaluation of the synthetic prompt rule; returns a row-major
    list of rows of booleans."""
    pos_labels = set()
    neg_labels = set()
    for p in points:
        label = int(scene[p.y, p.x])
        if p.positive:
            pos_labels.add(label)
        else:
            neg_labels.add(label)
    keep = pos_labels - neg_labels
    height, width = scene.shape
    rows = []
    for y in range(height):
        row = []
        for x in range(width):
            inside_box = box.x1 <= x <= box.x2 and box.y1 <= y <= box.y2
            row.append(inside_box and int(scene[y, x]) in keep)
        rows.append(row)
    return rows


def point_in_ring(ring, px: float, py: float) -> bool:
    """Even-odd ray cast to the right from (px, py)."""
    inside = False
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if (y1 <= py) == (y2 <= py):
            continue
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        if px < x_cross:
            inside = not inside
    return inside


def metrics_recompute(entries):
    """(ciou, giou, n_acc) from (gt_area, pred_area, inter_area, gt_nt, pred_nt)
    tuples, applying the no-target conventions by hand."""
    inter_sum = 0
    union_sum = 0
    per_sample = []
    nt_total = 0
    nt_hit = 0
    for gt_area, pred_area, inter_area, gt_nt, pred_nt in entries:
        if gt_nt:
            nt_total += 1
            if pred_nt:
                nt_hit += 1
                per_sample.append(1.0)
            else:
                union_sum += pred_area
                per_sample.append(0.0)
        elif pred_nt:
            union_sum += gt_area
            per_sample.append(0.0)
        else:
            union = gt_area + pred_area - inter_area
            inter_sum += inter_area
            union_sum += union
            per_sample.append(1.0 if union == 0 else inter_area / union)
    ciou_val = 1.0 if union_sum == 0 else inter_sum / union_sum
    giou_val = sum(per_sample) / len(per_sample)
    nacc_val = None if nt_total == 0 else nt_hit / nt_total
    return ciou_val, giou_val, nacc_val

/// Greedy layer placement: each layer, in the given order, goes to the
/// parameter server currently holding the fewest bytes (lowest index on ties).
pub fn partition_parameters(layer_sizes: &[u64], num_ps: usize) -> Vec<usize> {
    assert!(num_ps >= 1, "need at least one parameter server");
    let mut totals = vec![0u64; num_ps];
    layer_sizes
        .iter()
        .map(|&size| {
            let (ps, _) = totals
                .iter()
                .enumerate()
                .min_by_key(|&(i, &t)| (t, i))
                .expect("num_ps >= 1");
            totals[ps] += size;
            ps
        })
        .collect()
}

/// Bytes held by each server under `assignment`.
pub fn ps_totals(layer_sizes: &[u64], assignment: &[usize], num_ps: usize) -> Vec<u64> {
    let mut totals = vec![0u64; num_ps];
    for (&size, &ps) in layer_sizes.iter().zip(assignment) {
        totals[ps] += size;
    }
    totals
}

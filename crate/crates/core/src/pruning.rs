//! Relevance ranking, mask application, and physical compaction.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::lrp::RelevanceMap;
use crate::nn::ModelGraph;
use crate::rate::Rate;
use crate::scalar::Scalar;

pub use crate::rate::count_to_prune;

/// Filters masked by one [`filter_pruner`] call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneMaskDelta {
    /// Newly masked global ids, in the order they were chosen.
    pub newly_pruned: Vec<usize>,
    /// Total masked filters divided by `F_num`.
    pub resulting_rate: Rate,
}

/// Score given to boosted filters so they sort after every real score.
pub fn sentinel<T: Scalar>() -> T {
    T::max_value()
}

fn by_score<T: Scalar>(scores: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// Alive filter ids in ascending relevance, ties by global id (which orders
/// by layer, then channel).
pub fn ranking<T: Scalar>(relevance: &RelevanceMap<T>, alive: &[bool]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..relevance.len()).filter(|&g| alive[g]).collect();
    ids.sort_by(by_score(relevance.scores()));
    ids
}

/// Masks the lowest-relevance alive filters until `INT(target * F_num)`
/// filters are masked in total. A filter that is the last alive one in its
/// layer is passed over in favour of the next candidate.
///
/// The input model is left untouched; the pruned snapshot is returned.
pub fn filter_pruner<T: Scalar>(
    model: &ModelGraph<T>,
    relevance: &RelevanceMap<T>,
    target: Rate,
) -> Result<(ModelGraph<T>, PruneMaskDelta)> {
    let f_num = model.filter_count();
    if relevance.len() != f_num {
        return Err(Error::invalid(format!("relevance has {} entries, model has {f_num} filters", relevance.len())));
    }
    let want = count_to_prune(target, f_num);
    let have = model.pruned_count();
    if want < have {
        return Err(Error::invalid(format!("target rate {target} is below the current pruned count {have}/{f_num}")));
    }
    let mut next = model.clone();
    let mut newly = Vec::with_capacity(want - have);
    let idx = model.filter_index();
    let mut alive_per_conv: Vec<usize> = (0..idx.conv_layers().len()).map(|c| model.alive_in_conv(c)).collect();
    for g in ranking(relevance, model.mask()) {
        if newly.len() == want - have {
            break;
        }
        let conv = idx.locate(g).expect("ranked id in range").conv;
        if alive_per_conv[conv] <= 1 {
            continue;
        }
        alive_per_conv[conv] -= 1;
        next.set_alive(g, false)?;
        newly.push(g);
    }
    if newly.len() < want - have {
        return Err(Error::Starvation(format!(
            "rate {target} needs {want} of {f_num} filters masked but only {} can go without emptying a layer",
            have + newly.len()
        )));
    }
    let resulting_rate = Rate::new(next.pruned_count() as u64, f_num as u64)?;
    Ok((next, PruneMaskDelta { newly_pruned: newly, resulting_rate }))
}

/// Copy of `relevance` with its `t` lowest-scoring alive entries replaced by
/// [`sentinel`], which pushes them to the back of any later ranking.
pub fn boost_low_relevance<T: Scalar>(relevance: &RelevanceMap<T>, t: usize) -> Result<RelevanceMap<T>> {
    let alive = relevance.alive_count();
    if t >= alive && t > 0 {
        return Err(Error::invalid(format!("cannot boost {t} of {alive} alive filters")));
    }
    let mut out = relevance.clone();
    for g in ranking(relevance, relevance.alive()).into_iter().take(t) {
        out.scores_mut()[g] = sentinel();
    }
    Ok(out)
}

/// Removes masked filters physically. Forward outputs match the masked model.
pub fn compact<T: Scalar>(model: &ModelGraph<T>) -> Result<ModelGraph<T>> {
    model.compacted()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boost_examples() {
        let r = RelevanceMap::new(vec![0.1, 0.5, 0.2]);
        let s = sentinel::<f64>();
        assert_eq!(boost_low_relevance(&r, 1).unwrap().scores(), &[s, 0.5, 0.2]);
        assert_eq!(boost_low_relevance(&r, 0).unwrap(), r);
        assert_eq!(boost_low_relevance(&r, 2).unwrap().scores(), &[s, 0.5, s]);
        assert!(boost_low_relevance(&r, 3).is_err());
        // input untouched
        assert_eq!(r.scores(), &[0.1, 0.5, 0.2]);
    }

    #[test]
    fn boost_ignores_dead_filters() {
        let r = RelevanceMap::with_alive(vec![0.0, 0.5, 0.2], vec![false, true, true]).unwrap();
        let b = boost_low_relevance(&r, 1).unwrap();
        assert_eq!(b.scores(), &[0.0, 0.5, sentinel()]);
        assert!(boost_low_relevance(&r, 2).is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let r = RelevanceMap::new(vec![1.0, 0.5, 0.5, -2.0]);
        assert_eq!(ranking(&r, &[true; 4]), vec![3, 1, 2, 0]);
        assert_eq!(ranking(&r, &[true, false, true, true]), vec![3, 2, 0]);
    }
}

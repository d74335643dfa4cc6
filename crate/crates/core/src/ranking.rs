//! Domain types shared by every layer: the item catalog, user requests,
//! rankings and the sort-based ranking rule.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rankable item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: usize,
    pub group: usize,
    /// Environment-specific values (news: polarity).
    pub attributes: Vec<f64>,
}

/// The ranked universe with its partition into groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemCatalog {
    items: Vec<Item>,
    group_count: usize,
    members: Vec<Vec<usize>>,
}

impl ItemCatalog {
    pub fn new(items: Vec<Item>, group_count: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        let mut members = vec![Vec::new(); group_count];
        for (index, item) in items.iter().enumerate() {
            if item.id != index {
                return Err(Error::InvalidCatalog(format!(
                    "item at index {index} has id {}",
                    item.id
                )));
            }
            if item.group >= group_count {
                return Err(Error::InvalidCatalog(format!(
                    "item {} has group {} but only {group_count} groups exist",
                    item.id, item.group
                )));
            }
            members[item.group].push(index);
        }
        if let Some(g) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidCatalog(format!("group {g} is empty")));
        }
        Ok(Self {
            items,
            group_count,
            members,
        })
    }

    /// Builds a catalog from a group id per item, with no attributes.
    pub fn from_groups(groups: &[usize]) -> Result<Self> {
        let group_count = groups.iter().copied().max().map_or(0, |g| g + 1);
        let items = groups
            .iter()
            .enumerate()
            .map(|(id, &group)| Item {
                id,
                group,
                attributes: Vec::new(),
            })
            .collect();
        Self::new(items, group_count)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn group_of(&self, item: usize) -> usize {
        self.items[item].group
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

/// One user arrival. The true relevance vector is only read by the simulator
/// and by evaluation code; policies are handed the features alone.
#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    features: Vec<f64>,
    true_relevance: Vec<bool>,
}

impl Request {
    pub fn new(features: Vec<f64>, true_relevance: Vec<bool>) -> Self {
        Self {
            features,
            true_relevance,
        }
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn true_relevance(&self) -> &[bool] {
        &self.true_relevance
    }
}

/// A permutation of items; `order()[j]` is the item shown at position `j + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ranking {
    order: Vec<usize>,
    position: Vec<usize>,
}

impl Ranking {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut position = vec![usize::MAX; n];
        for (j, &item) in order.iter().enumerate() {
            if item >= n || position[item] != usize::MAX {
                return Err(Error::Contract(format!("ranking is not a permutation of 0..{n}")));
            }
            position[item] = j;
        }
        Ok(Self { order, position })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            position: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Zero-based display position of `item`.
    pub fn position_of(&self, item: usize) -> usize {
        self.position[item]
    }

    /// One-based rank of `item`.
    pub fn rank_of(&self, item: usize) -> usize {
        self.position[item] + 1
    }

    pub fn positions(&self) -> &[usize] {
        &self.position
    }
}

/// Sorts items by descending score, breaking ties uniformly at random.
pub fn argsort_desc<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> Result<Ranking> {
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, s)| s.is_nan()) {
        return Err(Error::InvalidScore { index, value });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // A uniform shuffle followed by a stable sort leaves every tied block in
    // uniformly random relative order.
    order.shuffle(rng);
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ranking::new(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn catalog_rejects_empty_group() {
        let err = ItemCatalog::new(
            vec![Item {
                id: 0,
                group: 1,
                attributes: vec![],
            }],
            2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidCatalog(_)));
        assert!(matches!(ItemCatalog::new(vec![], 1), Err(Error::EmptyCatalog)));
    }

    #[test]
    fn catalog_rejects_out_of_range_group_and_bad_ids() {
        assert!(ItemCatalog::from_groups(&[0, 0]).is_ok());
        let items = vec![
            Item {
                id: 1,
                group: 0,
                attributes: vec![],
            },
            Item {
                id: 0,
                group: 0,
                attributes: vec![],
            },
        ];
        assert!(ItemCatalog::new(items, 1).is_err());
        let items = vec![Item {
            id: 0,
            group: 3,
            attributes: vec![],
        }];
        assert!(ItemCatalog::new(items, 1).is_err());
    }

    #[test]
    fn ranking_requires_permutation() {
        assert!(Ranking::new(vec![0, 0]).is_err());
        assert!(Ranking::new(vec![0, 2]).is_err());
        let r = Ranking::new(vec![2, 0, 1]).unwrap();
        assert_eq!(r.rank_of(2), 1);
        assert_eq!(r.rank_of(1), 3);
    }

    #[test]
    fn argsort_orders_descending() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = argsort_desc(&[0.2, 0.9, 0.5], &mut rng).unwrap();
        assert_eq!(r.order(), &[1, 2, 0]);
    }

    #[test]
    fn argsort_rejects_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = argsort_desc(&[0.2, f64::NAN], &mut rng).unwrap_err();
        assert!(matches!(err, Error::InvalidScore { index: 1, .. }));
    }

    #[test]
    fn argsort_ties_are_balanced_and_seeded() {
        let mut first = 0;
        for seed in 0..2000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if argsort_desc(&[0.5, 0.5], &mut rng).unwrap().order()[0] == 0 {
                first += 1;
            }
        }
        // Binomial(2000, 1/2): sd ~ 22.4
        assert!((first as f64 - 1000.0).abs() < 3.0 * 22.4, "{first}");

        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let scores = [0.1, 0.1, 0.3, 0.3, 0.3];
        assert_eq!(
            argsort_desc(&scores, &mut a).unwrap(),
            argsort_desc(&scores, &mut b).unwrap()
        );
    }
}

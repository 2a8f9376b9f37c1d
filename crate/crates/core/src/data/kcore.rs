use std::collections::{HashMap, HashSet, VecDeque};
use std::hash::Hash;

/// Keeps the maximal set of (deduplicated) interactions in which every user
/// has at least `k_user` items and every item at least `k_item` users.
///
/// Vertices are peeled with a work queue until no degree falls below its
/// threshold. Surviving pairs keep their first-occurrence order.
pub fn k_core_filter<U, I>(pairs: &[(U, I)], k_user: usize, k_item: usize) -> Vec<(U, I)>
where
    U: Clone + Eq + Hash,
    I: Clone + Eq + Hash,
{
    let mut seen = HashSet::with_capacity(pairs.len());
    let edges: Vec<&(U, I)> = pairs.iter().filter(|p| seen.insert(*p)).collect();

    let mut user_id: HashMap<&U, usize> = HashMap::new();
    let mut item_id: HashMap<&I, usize> = HashMap::new();
    let mut ends = Vec::with_capacity(edges.len());
    for (u, i) in edges.iter().map(|(u, i)| (u, i)) {
        let nu = user_id.len();
        let ui = *user_id.entry(u).or_insert(nu);
        let ni = item_id.len();
        let ii = *item_id.entry(i).or_insert(ni);
        ends.push((ui, ii));
    }

    let mut user_edges = vec![Vec::new(); user_id.len()];
    let mut item_edges = vec![Vec::new(); item_id.len()];
    for (e, &(u, i)) in ends.iter().enumerate() {
        user_edges[u].push(e);
        item_edges[i].push(e);
    }
    let mut user_deg: Vec<usize> = user_edges.iter().map(Vec::len).collect();
    let mut item_deg: Vec<usize> = item_edges.iter().map(Vec::len).collect();
    let mut alive = vec![true; ends.len()];
    let mut user_gone = vec![false; user_deg.len()];
    let mut item_gone = vec![false; item_deg.len()];

    #[derive(Clone, Copy)]
    enum Vertex {
        User(usize),
        Item(usize),
    }
    let mut queue: VecDeque<Vertex> = VecDeque::new();
    queue.extend(
        (0..user_deg.len())
            .filter(|&u| user_deg[u] < k_user)
            .map(Vertex::User),
    );
    queue.extend(
        (0..item_deg.len())
            .filter(|&i| item_deg[i] < k_item)
            .map(Vertex::Item),
    );

    while let Some(v) = queue.pop_front() {
        let incident = match v {
            Vertex::User(u) if !user_gone[u] => {
                user_gone[u] = true;
                &user_edges[u]
            }
            Vertex::Item(i) if !item_gone[i] => {
                item_gone[i] = true;
                &item_edges[i]
            }
            _ => continue,
        };
        for &e in incident {
            if !alive[e] {
                continue;
            }
            alive[e] = false;
            let (u, i) = ends[e];
            user_deg[u] -= 1;
            item_deg[i] -= 1;
            if !user_gone[u] && user_deg[u] < k_user {
                queue.push_back(Vertex::User(u));
            }
            if !item_gone[i] && item_deg[i] < k_item {
                queue.push_back(Vertex::Item(i));
            }
        }
    }

    edges
        .into_iter()
        .zip(alive)
        .filter(|&(_, a)| a)
        .map(|(p, _)| p.clone())
        .collect()
}

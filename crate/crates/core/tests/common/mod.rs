//! Test-side oracles: dense re-implementations over `Vec<Vec<f64>>` and
//! brute-force graph routines, written independently of the library code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use kgalign::kg::{EntityId, EntityRecord, KnowledgeGraph, Triple};
use kgalign::numerics::{ParamStore, Tensor};
use kgalign::select::{Edge, NodeKind, Subgraph};
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn param(p: &ParamStore, name: &str) -> Mat {
    mat(p.get(name).unwrap_or_else(|| panic!("no parameter {name}")))
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

pub fn linear(x: &Mat, p: &ParamStore, prefix: &str) -> Mat {
    let w = param(p, &format!("{prefix}.w"));
    let b = param(p, &format!("{prefix}.b"));
    matmul(x, &w)
        .into_iter()
        .map(|row| row.iter().zip(&b[0]).map(|(v, c)| v + c).collect())
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn layer_norm(x: &Mat, p: &ParamStore, prefix: &str) -> Mat {
    let g = param(p, &format!("{prefix}.g"));
    let b = param(p, &format!("{prefix}.b"));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + 1e-10).sqrt() * g[0][i] + b[0][i])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn relu(x: &Mat) -> Mat {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "col count");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Post-norm encoder stack; returns hidden states and every attention matrix.
pub fn transformer(x: &Mat, p: &ParamStore, prefix: &str, layers: usize, heads: usize) -> (Mat, Vec<Mat>) {
    let mut x = x.clone();
    let mut attn_all = Vec::new();
    for l in 0..layers {
        let q = linear(&x, p, &format!("{prefix}.{l}.q"));
        let k = linear(&x, p, &format!("{prefix}.{l}.k"));
        let v = linear(&x, p, &format!("{prefix}.{l}.v"));
        let d = x[0].len();
        let hd = d / heads;
        let mut merged = vec![vec![0.0; d]; x.len()];
        for h in 0..heads {
            let cols = h * hd..(h + 1) * hd;
            let mut attn = Vec::new();
            for i in 0..x.len() {
                let scores: Vec<f64> = (0..x.len())
                    .map(|j| dot(&q[i][cols.clone()], &k[j][cols.clone()]) / (hd as f64).sqrt())
                    .collect();
                let w = softmax(&scores);
                for c in cols.clone() {
                    merged[i][c] = (0..x.len()).map(|j| w[j] * v[j][c]).sum();
                }
                attn.push(w);
            }
            attn_all.push(attn);
        }
        let o = linear(&merged, p, &format!("{prefix}.{l}.o"));
        let x1 = layer_norm(&add(&x, &o), p, &format!("{prefix}.{l}.ln1"));
        let hidden: Mat = linear(&x1, p, &format!("{prefix}.{l}.ff1"))
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        let ff = linear(&hidden, p, &format!("{prefix}.{l}.ff2"));
        x = layer_norm(&add(&x1, &ff), p, &format!("{prefix}.{l}.ln2"));
    }
    (x, attn_all)
}

/// Token encoder: CLS + tokens (truncated), embeddings plus optional positions.
pub fn encode_tokens(p: &ParamStore, prefix: &str, tokens: &[u32], max_len: usize, positions: bool, layers: usize, heads: usize) -> Mat {
    let tok = param(p, &format!("{prefix}.tok"));
    let pos = param(p, &format!("{prefix}.pos"));
    let ids: Vec<usize> = std::iter::once(2usize)
        .chain(tokens.iter().map(|&t| t as usize))
        .take(max_len)
        .collect();
    let x: Mat = ids
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            tok[t]
                .iter()
                .enumerate()
                .map(|(c, v)| v + if positions { pos[i][c] } else { 0.0 })
                .collect()
        })
        .collect();
    transformer(&x, p, &format!("{prefix}.layer"), layers, heads).0
}

/// Dense GAT: per node, softmax over in-edges plus a self edge.
pub struct GatOracle {
    pub states: Mat,
    /// Per layer, per destination node: `(src, relation, weight)`.
    pub attention: Vec<Vec<Vec<(usize, usize, f64)>>>,
}

pub fn gat_oracle(p: &ParamStore, sub: &Subgraph, entity_states: &Mat, self_rel: usize, layers: usize) -> GatOracle {
    let types = param(p, "gat.type");
    let rel = param(p, "kg.rel");
    let int = param(p, "gat.int");
    let kind_row = |k: NodeKind| match k {
        NodeKind::Extracted => 0,
        NodeKind::Neighbor => 1,
        NodeKind::Interaction => 2,
    };
    let mut next = 0;
    let mut h: Mat = sub
        .nodes
        .iter()
        .map(|n| {
            if n.kind == NodeKind::Interaction {
                int[0].clone()
            } else {
                next += 1;
                entity_states[next - 1].clone()
            }
        })
        .collect();
    let n = h.len();
    let mut attention = Vec::new();
    for l in 0..layers {
        let pre = format!("gat.{l}");
        let mut new_h = h.clone();
        let mut layer_att = Vec::new();
        for j in 0..n {
            let u_j = &types[kind_row(sub.nodes[j].kind)];
            let q_in = vec![[h[j].clone(), u_j.clone()].concat()];
            let q = linear(&q_in, p, &format!("{pre}.q"))[0].clone();
            let mut incoming: Vec<(usize, usize)> = sub
                .edges
                .iter()
                .filter(|e| e.dst == j)
                .map(|e| (e.src, e.relation.0))
                .collect();
            incoming.push((j, self_rel));
            let mut scores = Vec::new();
            let mut messages = Vec::new();
            for &(s, r) in &incoming {
                let u_s = &types[kind_row(sub.nodes[s].kind)];
                let x = vec![[h[s].clone(), u_s.clone(), rel[r].clone()].concat()];
                let k = linear(&x, p, &format!("{pre}.k"))[0].clone();
                scores.push(dot(&q, &k) / (q.len() as f64).sqrt());
                let hid = relu(&linear(&x, p, &format!("{pre}.m1")));
                messages.push(linear(&hid, p, &format!("{pre}.m2"))[0].clone());
            }
            let a = softmax(&scores);
            let mut agg = vec![0.0; h[j].len()];
            for (w, m) in a.iter().zip(&messages) {
                for (acc, v) in agg.iter_mut().zip(m) {
                    *acc += w * v;
                }
            }
            let upd = linear(&vec![agg], p, &format!("{pre}.n"))[0].clone();
            new_h[j] = upd.iter().zip(&h[j]).map(|(u, x)| u + x).collect();
            layer_att.push(incoming.iter().zip(&a).map(|(&(s, r), &w)| (s, r, w)).collect());
        }
        h = new_h;
        attention.push(layer_att);
    }
    GatOracle { states: h, attention }
}

/// Single-query cross attention: `(output, weights)`.
pub fn cross_attend(p: &ParamStore, prefix: &str, query: &[f64], ctx: &Mat) -> (Vec<f64>, Vec<f64>) {
    let q = linear(&vec![query.to_vec()], p, &format!("{prefix}.q"))[0].clone();
    let k = linear(ctx, p, &format!("{prefix}.k"));
    let v = linear(ctx, p, &format!("{prefix}.v"));
    let w = softmax(&k.iter().map(|kr| dot(&q, kr) / (query.len() as f64).sqrt()).collect::<Vec<_>>());
    let mut att = vec![0.0; query.len()];
    for (wi, vr) in w.iter().zip(&v) {
        for (a, x) in att.iter_mut().zip(vr) {
            *a += wi * x;
        }
    }
    let o = linear(&vec![att], p, &format!("{prefix}.o"));
    let out = layer_norm(&add(&vec![query.to_vec()], &o), p, &format!("{prefix}.ln"));
    (out[0].clone(), w)
}

pub fn classify(p: &ParamStore, fused: &[f64]) -> [f64; 2] {
    let logits = linear(&vec![fused.to_vec()], p, "cls")[0].clone();
    let s = softmax(&logits);
    [s[0], s[1]]
}

/// Random graph with `n` entities, at most `m` distinct directed triples and
/// `r` relations. Descriptions are short random token lists over `vocab`.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, m: usize, r: usize, vocab: u32) -> KnowledgeGraph {
    let entities = (0..n)
        .map(|i| EntityRecord {
            id: EntityId(i),
            label: format!("n{i}"),
            name: format!("name{i}"),
            description: (0..rng.random_range(1..5)).map(|_| rng.random_range(3..vocab)).collect(),
        })
        .collect();
    let mut triples = BTreeSet::new();
    if n > 1 {
        for _ in 0..m {
            let h = rng.random_range(0..n);
            let t = rng.random_range(0..n);
            if h != t {
                triples.insert(Triple::new(h, rng.random_range(0..r), t));
            }
        }
    }
    KnowledgeGraph::new(entities, (0..r).map(|i| format!("rel_{i}")).collect(), triples.into_iter().collect()).unwrap()
}

/// All-pairs undirected hop distances (`usize::MAX` if unreachable).
pub fn floyd_warshall(g: &KnowledgeGraph) -> Vec<Vec<usize>> {
    let n = g.entity_count();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for t in g.triples() {
        d[t.head.0][t.tail.0] = 1;
        d[t.tail.0][t.head.0] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d.into_iter()
        .map(|r| r.into_iter().map(|v| if v >= inf { usize::MAX } else { v }).collect())
        .collect()
}

/// BFS from one seed by rescanning the triple list at every level.
pub fn scan_bfs(g: &KnowledgeGraph, seed: usize, k: usize) -> BTreeMap<usize, usize> {
    let mut dist = BTreeMap::from([(seed, 0usize)]);
    let mut queue = VecDeque::from([seed]);
    while let Some(u) = queue.pop_front() {
        if dist[&u] == k {
            continue;
        }
        for t in g.triples() {
            for (a, b) in [(t.head.0, t.tail.0), (t.tail.0, t.head.0)] {
                if a == u && !dist.contains_key(&b) {
                    dist.insert(b, dist[&u] + 1);
                    queue.push_back(b);
                }
            }
        }
    }
    dist
}

/// Candidates reached by `>= min_shared` seeds within `k` hops (seeds
/// excluded), the `top_k` of lowest degree with ties by id.
pub fn selection_oracle(g: &KnowledgeGraph, seeds: &BTreeSet<usize>, k: usize, min_shared: usize, top_k: usize) -> Vec<usize> {
    let mut count: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in seeds {
        for &e in scan_bfs(g, s, k).keys() {
            if !seeds.contains(&e) {
                *count.entry(e).or_default() += 1;
            }
        }
    }
    let degree = |e: usize| g.triples().iter().filter(|t| t.head.0 == e).count() + g.triples().iter().filter(|t| t.tail.0 == e).count();
    let mut all: Vec<(usize, usize)> = count
        .into_iter()
        .filter(|&(_, c)| c >= min_shared)
        .map(|(e, _)| (degree(e), e))
        .collect();
    all.sort();
    all.into_iter().take(top_k).map(|(_, e)| e).collect()
}

/// Triples with both ends in `nodes`, by scanning the triple list.
pub fn scan_connecting(g: &KnowledgeGraph, nodes: &BTreeSet<usize>) -> Vec<Triple> {
    g.triples()
        .iter()
        .filter(|t| nodes.contains(&t.head.0) && nodes.contains(&t.tail.0))
        .copied()
        .collect()
}

pub fn edge_set(edges: &[Edge]) -> BTreeSet<(usize, usize, usize)> {
    edges.iter().map(|e| (e.src, e.relation.0, e.dst)).collect()
}

/// Five entities, three relations, five triples, with one-line descriptions.
pub fn five_entity_fixture() -> (KnowledgeGraph, kgalign::kg::Vocab) {
    let rows = [
        ("paris", "paris is the largest city of france"),
        ("france", "france is a country in western europe"),
        ("berlin", "berlin is the largest city of germany"),
        ("germany", "germany is a country in central europe"),
        ("europe", "europe is a continent"),
    ];
    let mut words: Vec<String> = rows
        .iter()
        .flat_map(|(_, d)| d.split_whitespace().map(String::from))
        .collect();
    words.sort();
    words.dedup();
    let vocab = kgalign::kg::Vocab::new(
        ["<unk>", "<mask>", "<cls>"].iter().map(|s| s.to_string()).chain(words).collect(),
    )
    .unwrap();
    let entities = rows
        .iter()
        .enumerate()
        .map(|(i, (name, desc))| EntityRecord {
            id: EntityId(i),
            label: name.to_string(),
            name: name.to_string(),
            description: vocab.tokenize(desc),
        })
        .collect();
    let triples = vec![
        Triple::new(0, 0, 1),
        Triple::new(2, 0, 3),
        Triple::new(1, 1, 3),
        Triple::new(1, 2, 4),
        Triple::new(3, 2, 4),
    ];
    let relations = ["capital_of", "borders", "part_of"].iter().map(|s| s.to_string()).collect();
    (KnowledgeGraph::new(entities, relations, triples).unwrap(), vocab)
}

/// Translation distance of every triple against every candidate tail,
/// computed densely from the entity table and relation rows.
pub fn transe_distance(entities: &Mat, relations: &Mat, h: usize, r: usize, t: usize) -> f64 {
    entities[h]
        .iter()
        .zip(&relations[r])
        .zip(&entities[t])
        .map(|((a, b), c)| (a + b - c).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub struct TripletRun {
    pub log: Vec<kgalign::encoder::PretrainLogRow>,
    pub mean_positive: f64,
    pub mean_negative: f64,
    /// Fraction of (triple, corrupted side) queries whose true entity ranks
    /// in the top half of all entities.
    pub hits_at_half: f64,
}

/// Pre-trains the description encoder on [`five_entity_fixture`] and scores
/// the result with a dense recomputation of the entity table.
pub fn triplet_fixture_run(seed: u64, steps: usize) -> TripletRun {
    use kgalign::encoder::{init_encoder, train_encoder, EncoderConfig, PretrainConfig, RELATIONS};
    use kgalign::transformer::TransformerConfig;

    let (g, vocab) = five_entity_fixture();
    let cfg = EncoderConfig::new(
        TransformerConfig {
            dim: 16,
            layers: 1,
            heads: 2,
            ffn_dim: 32,
            max_len: 12,
        },
        vocab.len(),
    );
    let mut params = ParamStore::new();
    let mut rng = kgalign::numerics::seeded(seed);
    init_encoder(&mut params, &cfg, g.total_relations(), &mut rng);
    let train = PretrainConfig {
        steps,
        ..PretrainConfig::default()
    };
    let log = train_encoder(&g, &cfg, &train, &mut params, &mut rng).unwrap();

    let entities: Mat = g
        .entities()
        .iter()
        .map(|e| encode_tokens(&params, "kg.enc", &e.description, 12, true, 1, 2)[0].clone())
        .collect();
    let relations = param(&params, RELATIONS);
    let n = entities.len();
    let truths: BTreeSet<(usize, usize, usize)> = g.triples().iter().map(|t| (t.head.0, t.relation.0, t.tail.0)).collect();
    let (mut pos, mut neg, mut hits, mut queries) = (Vec::new(), Vec::new(), 0usize, 0usize);
    for &(h, r, t) in &truths {
        let d = |a: usize, b: usize| transe_distance(&entities, &relations, a, r, b);
        pos.push(d(h, t));
        for e in 0..n {
            if !truths.contains(&(h, r, e)) {
                neg.push(d(h, e));
            }
            if !truths.contains(&(e, r, t)) {
                neg.push(d(e, t));
            }
        }
        let tail_rank = 1 + (0..n).filter(|&e| d(h, e) < d(h, t)).count();
        let head_rank = 1 + (0..n).filter(|&e| d(e, t) < d(h, t)).count();
        hits += [tail_rank, head_rank].iter().filter(|&&rank| 2 * rank <= n).count();
        queries += 2;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    TripletRun {
        log,
        mean_positive: mean(&pos),
        mean_negative: mean(&neg),
        hits_at_half: hits as f64 / queries as f64,
    }
}

/// Knowledge, image and text inputs for the fusion head: a 4-node subgraph
/// (two extracted entities, one neighbor, the interaction node), three image
/// tokens and a text vector. Entity states are trainable (`fixture.ent`).
pub struct HeadFixture {
    pub params: ParamStore,
    pub graph: KnowledgeGraph,
    pub subgraph: Subgraph,
    pub gat: kgalign::gat::GatConfig,
    pub fusion: kgalign::fusion::FusionConfig,
    pub text: Tensor,
    pub image: Tensor,
    pub label: usize,
}

impl HeadFixture {
    pub fn new(seed: u64, dim: usize) -> Self {
        use kgalign::fusion::{init_fusion, FusionConfig};
        use kgalign::gat::{init_gat, GatConfig};

        let mut rng = kgalign::numerics::seeded(seed);
        let entities = (0..3)
            .map(|i| EntityRecord {
                id: EntityId(i),
                label: format!("n{i}"),
                name: format!("n{i}"),
                description: vec![3],
            })
            .collect();
        let triples = vec![Triple::new(0, 0, 2), Triple::new(2, 1, 1), Triple::new(1, 0, 0)];
        let graph = KnowledgeGraph::new(entities, vec!["a".into(), "b".into()], triples).unwrap();
        let extracted: BTreeSet<EntityId> = [EntityId(0), EntityId(1)].into();
        let subgraph = kgalign::select::build_subgraph(&graph, &extracted, &[EntityId(2)]).unwrap();
        let gat = GatConfig {
            layers: 2,
            dim,
            qk_dim: dim,
            hidden: dim + 1,
        };
        let fusion = FusionConfig {
            dim,
            pooled_only: false,
            use_kg: true,
        };
        let mut params = ParamStore::new();
        params.init_table("kg.rel", graph.total_relations(), dim, &mut rng);
        params.init_table("fixture.ent", 3, dim, &mut rng);
        init_gat(&mut params, &gat, &mut rng);
        init_fusion(&mut params, &fusion, &mut rng);
        let text = Tensor::uniform(1, dim, 1.0, &mut rng);
        let image = Tensor::uniform(3, dim, 1.0, &mut rng);
        let label = rng.random_range(0..2);
        Self {
            params,
            graph,
            subgraph,
            gat,
            fusion,
            text,
            image,
            label,
        }
    }

    /// `ce(classify(fuse(text, gat(...), image)), label)` bound to `s`.
    pub fn loss(&self, s: &mut kgalign::numerics::Session) -> kgalign::numerics::Var {
        use kgalign::fusion::{fuse, Context};
        let ent = s.param("fixture.ent");
        let out = kgalign::gat::gat_forward(s, &self.gat, &self.subgraph, ent, self.graph.self_relation());
        let text = s.constant(self.text.clone());
        let tokens = s.constant(self.image.clone());
        let pooled = s.gather(tokens, &[0]);
        let kg = Context {
            pooled: out.readout,
            tokens: out.states,
        };
        let image = Context { pooled, tokens };
        let fused = fuse(s, &self.fusion, text, Some(kg), image).unwrap();
        s.cross_entropy(fused.logits, &[self.label])
    }

    /// Dense recomputation of `[p_real, p_fake]`.
    pub fn oracle(&self) -> [f64; 2] {
        let p = &self.params;
        let g = gat_oracle(p, &self.subgraph, &param(p, "fixture.ent"), self.graph.self_relation().0, self.gat.layers);
        let (h, _) = cross_attend(p, "fuse.kg", self.text.row(0), &g.states);
        let (fused, _) = cross_attend(p, "fuse.img", &h, &mat(&self.image));
        classify(p, &fused)
    }
}

/// Small model over a data directory written by `synth_generate`; a few
/// seconds per training run in a debug build.
pub fn small_config(dir: &std::path::Path) -> kgalign::config::Config {
    let mut cfg = kgalign::config::Config {
        data_dir: dir.to_path_buf(),
        ..Default::default()
    };
    cfg.apply_text(
        "model.dim = 8\n\
         encoder.ffn_dim = 16\nencoder.max_len = 16\n\
         text.ffn_dim = 16\ntext.max_len = 24\n\
         image.ffn_dim = 16\n\
         gat.qk_dim = 8\ngat.hidden = 16\n\
         train.batch_size = 16\ntrain.phase1_epochs = 2\ntrain.phase2_epochs = 1\n\
         train.base_lr = 3e-3\ntrain.lr_period = 100\ntrain.phase2_lr = 3e-4\n\
         selection.hop_k = 1\nselection.min_shared_seeds = 1\nselection.top_k = 50\n",
        std::path::Path::new("small.conf"),
    )
    .unwrap();
    cfg
}

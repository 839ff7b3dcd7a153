use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use evmfuzz_core::asm::assemble;
use evmfuzz_core::cfg::{critical_sites, disassemble, distance_map, Cfg};
use evmfuzz_core::fixtures;
use evmfuzz_core::fuzzer::{run_campaign, Budget, CampaignConfig, Strategy};
use evmfuzz_core::{deploy_contract, execute_transaction, DeployMode, Transaction, Word, WorldState};

fn interpreter(c: &mut Criterion) {
    // 10k iterations of a hash-and-store loop.
    let code = assemble(
        "PUSH2 10000 l: DUP1 PUSH1 0 MSTORE PUSH1 32 PUSH1 0 SHA3 PUSH1 1 SSTORE \
         PUSH1 1 SWAP1 SUB DUP1 @l JUMPI STOP",
    )
    .unwrap();
    let mut state = WorldState::new();
    let addr = deploy_contract(&mut state, &code, DeployMode::Runtime, &[], Word::zero()).unwrap();
    let tx = Transaction {
        gas_limit: 1_000_000_000,
        ..Transaction::call(addr, vec![])
    };
    c.bench_function("interpreter/hash_store_loop", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| black_box(execute_transaction(&mut s, &tx).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn static_analysis(c: &mut Criterion) {
    let target = fixtures::gated().deploy();
    let code = target.state.code(&target.address).to_vec();
    c.bench_function("cfg/build_and_distances", |b| {
        b.iter(|| {
            let ins = disassemble(black_box(&code));
            let cfg = Cfg::from_code(&code);
            black_box(distance_map(&cfg, &critical_sites(&ins)))
        })
    });
}

fn campaign(c: &mut Criterion) {
    let target = fixtures::reentrancy().deploy();
    let mut group = c.benchmark_group("campaign_1000iter");
    group.sample_size(10);
    for strategy in Strategy::ALL {
        let config = CampaignConfig::new(strategy, Budget::Iterations(1_000), 1);
        group.bench_function(strategy.name(), |b| b.iter(|| black_box(run_campaign(&target, &config).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, interpreter, static_analysis, campaign);
criterion_main!(benches);

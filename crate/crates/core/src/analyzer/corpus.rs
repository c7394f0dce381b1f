//! Synthetic callgraph corpus: shared kernel plumbing, one pattern per known
//! page-spraying callsite, and distractors that each break exactly one rule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{
    AccessFact, CallGraphDoc, ChildField, Edge, EdgeKind, FactOp, FunctionDecl, FunctionTable, RootConfig,
};

/// The single acceptance rule a distractor violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorRule {
    /// Allocation only reachable through an object allocator.
    TerminalPath,
    /// Copy precedes the allocation store.
    Ordering,
    /// Store and copy target different fields or records.
    FieldMismatch,
    /// The node, or the only route to the allocator, is arch-specific.
    ArchTagged,
    /// Only one of the two traces reaches the node.
    NoCrossing,
    /// Crossing node with no allocation store anywhere in view.
    MissingFacts,
    /// Allocator is further away than the depth cap.
    DepthLimit,
    /// The store only happens behind an indirect call.
    IndirectStore,
    /// Allocation store lives in another subsystem than the mmap handler.
    SubsystemMismatch,
    /// The mmap handler's subsystem never stores an allocated page.
    NoAllocationStore,
    /// Store and remap use are unrelated fields, or nested two levels deep.
    RecordMismatch,
    /// The mmap handler never reaches a remap primitive.
    NoRemapPath,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Distractor {
    pub function: &'static str,
    pub rule: DistractorRule,
}

use DistractorRule as R;

/// Every distractor in the corpus with the rule it breaks.
pub const DISTRACTORS: &[Distractor] = &[
    Distractor { function: "sctp_user_addto_chunk", rule: R::TerminalPath },
    Distractor { function: "load_msg", rule: R::TerminalPath },
    Distractor { function: "keyctl_update_key", rule: R::TerminalPath },
    Distractor { function: "setxattr_copy", rule: R::TerminalPath },
    Distractor { function: "vhost_net_build_xdp", rule: R::TerminalPath },
    Distractor { function: "rxrpc_send_data", rule: R::Ordering },
    Distractor { function: "espintcp_sendmsg", rule: R::Ordering },
    Distractor { function: "kcm_sendmsg", rule: R::Ordering },
    Distractor { function: "l2tp_ip_sendmsg", rule: R::FieldMismatch },
    Distractor { function: "ping_v4_sendmsg", rule: R::FieldMismatch },
    Distractor { function: "vsock_stream_sendmsg", rule: R::FieldMismatch },
    Distractor { function: "sparc_pipe_write_compat", rule: R::ArchTagged },
    Distractor { function: "s390_hypfs_write", rule: R::ArchTagged },
    Distractor { function: "privcmd_buf_write", rule: R::ArchTagged },
    Distractor { function: "sparc_vdso_mmap", rule: R::ArchTagged },
    Distractor { function: "page_pool_fill_cache", rule: R::NoCrossing },
    Distractor { function: "proc_pid_cmdline_write", rule: R::NoCrossing },
    Distractor { function: "ax25_sendmsg", rule: R::MissingFacts },
    Distractor { function: "deepfs_write", rule: R::DepthLimit },
    Distractor { function: "seq_buf_write", rule: R::IndirectStore },
    Distractor { function: "vfio_pci_mmap", rule: R::SubsystemMismatch },
    Distractor { function: "hpet_mmap", rule: R::NoAllocationStore },
    Distractor { function: "fb_mmap", rule: R::RecordMismatch },
    Distractor { function: "snd_pcm_mmap", rule: R::RecordMismatch },
    Distractor { function: "aio_ring_mmap", rule: R::NoRemapPath },
    Distractor { function: "hugetlbfs_file_mmap", rule: R::NoRemapPath },
];

/// Number of helper hops between the depth distractor and the allocator.
pub const DEEP_CHAIN: usize = 33;

#[derive(Default)]
struct Builder {
    doc: Option<CallGraphDoc>,
    ids: BTreeMap<String, u32>,
    tables: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Builder {
    fn new() -> Self {
        Self {
            doc: Some(CallGraphDoc::empty()),
            ..Self::default()
        }
    }

    fn doc(&mut self) -> &mut CallGraphDoc {
        self.doc.as_mut().expect("builder not finished")
    }

    fn declare(&mut self, name: &str, subsystem: &str, syscall: Option<&str>, arch: Option<&str>) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.ids.len() as u32 + 1;
        self.ids.insert(name.to_string(), id);
        self.doc().functions.push(FunctionDecl {
            id,
            name: name.to_string(),
            subsystem: subsystem.to_string(),
            arch: arch.map(str::to_string),
            syscall: syscall.map(str::to_string),
        });
        id
    }

    fn f(&mut self, name: &str, subsystem: &str) -> u32 {
        self.declare(name, subsystem, None, None)
    }

    fn id(&self, name: &str) -> u32 {
        self.ids[name]
    }

    fn call(&mut self, caller: &str, callee: &str, order_index: u32) {
        let (caller, callee) = (self.id(caller), self.id(callee));
        self.doc().edges.push(Edge {
            caller,
            callee,
            kind: EdgeKind::Direct,
            order_index,
        });
    }

    /// `caller` dispatches to `callee` through `table.member`.
    fn via(&mut self, caller: &str, table: &str, member: &str, callee: &str) {
        let (caller_id, callee_id) = (self.id(caller), self.id(callee));
        self.tables
            .entry(table.to_string())
            .or_default()
            .insert(member.to_string(), callee_id);
        self.doc().edges.push(Edge {
            caller: caller_id,
            callee: callee_id,
            kind: EdgeKind::ViaTable {
                table: table.to_string(),
                member: member.to_string(),
            },
            order_index: 0,
        });
    }

    /// Registers a table member with no modeled caller.
    fn member(&mut self, table: &str, member: &str, callee: &str) {
        let id = self.id(callee);
        self.tables.entry(table.to_string()).or_default().insert(member.to_string(), id);
    }

    fn fact(&mut self, function: &str, record: &str, path: &str, op: FactOp, order_index: u32) {
        let function = self.id(function);
        self.doc().facts.push(AccessFact {
            function,
            record_name: record.to_string(),
            field_path: path.to_string(),
            op,
            order_index,
        });
    }

    fn child(&mut self, parent: &str, field: &str, child: &str) {
        self.doc().child_fields.push(ChildField {
            parent: parent.into(),
            field: field.into(),
            child: child.into(),
        });
    }

    fn finish(mut self) -> CallGraphDoc {
        let mut doc = self.doc.take().expect("builder not finished");
        doc.function_tables = std::mem::take(&mut self.tables)
            .into_iter()
            .map(|(name, members)| FunctionTable { name, members })
            .collect();
        doc.root_config = Some(RootConfig::default());
        doc
    }
}

use FactOp::{AllocStore, CopyWrite, RemapUse};

/// Allocators, copy and remap primitives, object allocators, and the
/// syscall plumbing shared by every pattern.
fn plumbing(b: &mut Builder) {
    for n in ["alloc_pages", "__alloc_pages", "alloc_page", "__get_free_pages", "vmalloc_user"] {
        b.f(n, "mm");
    }
    for n in ["kmalloc", "__kmalloc", "kmem_cache_alloc", "kvmalloc"] {
        b.f(n, "slab");
    }
    b.call("kmalloc", "__kmalloc", 1);
    b.call("__kmalloc", "alloc_pages", 1);
    b.call("kmem_cache_alloc", "alloc_pages", 1);
    b.call("kvmalloc", "kmalloc", 1);
    b.call("kvmalloc", "vmalloc_user", 2);
    for n in ["copy_from_user", "copy_page_from_iter", "copy_from_iter"] {
        b.f(n, "lib");
    }
    for n in ["skb_copy_to_page_nocache", "skb_copy_datagram_from_iter"] {
        b.f(n, "net_core");
    }
    for n in ["vm_insert_page", "vm_map_pages", "remap_pfn_range", "remap_vmalloc_range"] {
        b.f(n, "mm");
    }

    // Socket data paths. sock_alloc_send_pskb summarizes alloc_skb_with_frags.
    b.f("sock_alloc_send_pskb", "net_core");
    b.f("alloc_skb_with_frags", "net_core");
    b.call("sock_alloc_send_pskb", "alloc_skb_with_frags", 3);
    b.fact("sock_alloc_send_pskb", "sk_buff", "frags[i].page", AllocStore, 4);
    b.call("alloc_skb_with_frags", "alloc_pages", 2);
    b.f("skb_page_frag_refill", "net_core");
    b.call("skb_page_frag_refill", "alloc_pages", 1);
    b.fact("skb_page_frag_refill", "page_frag", "page", AllocStore, 2);

    // Entry plumbing.
    for n in ["__sys_sendmsg", "__sys_sendto", "sock_sendmsg", "__sys_setsockopt"] {
        b.f(n, "net_socket");
    }
    b.call("__sys_sendmsg", "sock_sendmsg", 1);
    b.call("__sys_sendto", "sock_sendmsg", 1);
    for n in ["ksys_write", "vfs_write", "vfs_ioctl", "__x64_sys_ioctl"] {
        b.f(n, "fs");
    }
    b.call("ksys_write", "vfs_write", 1);
    b.call("__x64_sys_ioctl", "vfs_ioctl", 1);
    for n in ["ksys_mmap_pgoff", "mmap_region", "call_mmap"] {
        b.f(n, "mm");
    }
    b.call("ksys_mmap_pgoff", "mmap_region", 1);
    b.call("mmap_region", "call_mmap", 1);
}

fn socket_sendmsg(b: &mut Builder, ops: &str, entry: &str, subsystem: &str) {
    b.f(entry, subsystem);
    b.via("sock_sendmsg", ops, "sendmsg", entry);
}

/// Page-frag variant: the page lands in `page_frag.page` via the shared refill
/// helper, then the node copies into it.
fn frag_refill_copy(b: &mut Builder, node: &str, subsystem: &str, syscall: &str, copier: &str) {
    b.declare(node, subsystem, Some(syscall), None);
    b.call(node, "skb_page_frag_refill", 2);
    b.call(node, copier, 5);
    b.fact(node, "page_frag", "page", CopyWrite, 5);
}

/// Skb variant: pages allocated into `sk_buff.frags` by the socket helper.
fn skb_frags_copy(b: &mut Builder, node: &str, subsystem: &str, syscall: &str) {
    b.declare(node, subsystem, Some(syscall), None);
    b.call(node, "sock_alloc_send_pskb", 2);
    b.call(node, "skb_copy_datagram_from_iter", 6);
    b.fact(node, "sk_buff", "frags[i].page", CopyWrite, 6);
}

/// Raw variant: the node allocates and copies itself.
fn raw_copy(b: &mut Builder, node: &str, subsystem: &str, syscall: &str, record: &str, field: &str, alloc: &str, copier: &str) {
    b.declare(node, subsystem, Some(syscall), None);
    b.call(node, alloc, 1);
    b.fact(node, record, field, AllocStore, 2);
    b.call(node, copier, 5);
    b.fact(node, record, field, CopyWrite, 6);
}

fn copy_write_patterns(b: &mut Builder) {
    // af_packet
    b.f("packet_sendmsg", "af_packet");
    b.via("sock_sendmsg", "packet_ops", "sendmsg", "packet_sendmsg");
    skb_frags_copy(b, "packet_snd", "af_packet", "sendmsg");
    b.call("packet_sendmsg", "packet_snd", 1);

    // rds: the scatterlist page comes from the remainder allocator.
    socket_sendmsg(b, "rds_proto_ops", "rds_sendmsg", "rds");
    b.declare("rds_message_copy_from_user", "rds", Some("sendmsg"), None);
    b.f("rds_page_remainder_alloc", "rds");
    b.call("rds_page_remainder_alloc", "alloc_page", 1);
    b.fact("rds_page_remainder_alloc", "scatterlist", "page_link", AllocStore, 2);
    b.call("rds_message_copy_from_user", "rds_page_remainder_alloc", 2);
    b.call("rds_message_copy_from_user", "copy_page_from_iter", 4);
    b.fact("rds_message_copy_from_user", "scatterlist", "page_link", CopyWrite, 4);
    b.call("rds_sendmsg", "rds_message_copy_from_user", 3);

    // af_unix and netlink
    skb_frags_copy(b, "unix_dgram_sendmsg", "af_unix", "sendmsg");
    b.via("sock_sendmsg", "unix_dgram_ops", "sendmsg", "unix_dgram_sendmsg");
    skb_frags_copy(b, "unix_stream_sendmsg", "af_unix", "sendmsg");
    b.via("sock_sendmsg", "unix_stream_ops", "sendmsg", "unix_stream_sendmsg");
    skb_frags_copy(b, "netlink_sendmsg", "netlink", "sendmsg");
    b.via("sock_sendmsg", "netlink_ops", "sendmsg", "netlink_sendmsg");

    // tcp repair queue, reached from the locked sendmsg paths.
    b.f("tcp_sendmsg", "ipv4");
    b.f("tcp_sendmsg_locked", "ipv4");
    b.via("sock_sendmsg", "inet_stream_ops", "sendmsg", "tcp_sendmsg");
    b.call("tcp_sendmsg", "tcp_sendmsg_locked", 2);
    frag_refill_copy(b, "tcp_send_rcvq", "ipv4", "sendto", "skb_copy_to_page_nocache");
    b.call("tcp_sendmsg_locked", "tcp_send_rcvq", 3);
    b.f("tcpv6_sendmsg", "ipv6");
    b.via("sock_sendmsg", "inet6_stream_ops", "sendmsg", "tcpv6_sendmsg");
    frag_refill_copy(b, "tcp_send_rcvq(inet6)", "ipv6", "sendto", "skb_copy_to_page_nocache");
    b.call("tcpv6_sendmsg", "tcp_send_rcvq(inet6)", 3);

    // tun and tap character devices
    b.f("tun_chr_write_iter", "tun");
    b.f("tun_get_user", "tun");
    b.via("vfs_write", "tun_fops", "write_iter", "tun_chr_write_iter");
    b.call("tun_chr_write_iter", "tun_get_user", 1);
    frag_refill_copy(b, "tun_build_skb", "tun", "write", "copy_page_from_iter");
    skb_frags_copy(b, "tun_alloc_skb", "tun", "write");
    b.call("tun_get_user", "tun_build_skb", 2);
    b.call("tun_get_user", "tun_alloc_skb", 3);
    b.f("tap_write_iter", "tap");
    b.f("tap_get_user", "tap");
    b.via("vfs_write", "tap_fops", "write_iter", "tap_write_iter");
    b.call("tap_write_iter", "tap_get_user", 1);
    // Inlined into tap_get_user in real builds; kept as its own node here.
    skb_frags_copy(b, "tap_alloc_skb", "tap", "write");
    b.call("tap_get_user", "tap_alloc_skb", 2);

    // pipe
    raw_copy(b, "pipe_write", "pipe", "write", "pipe_buffer", "page", "alloc_page", "copy_page_from_iter");
    b.via("vfs_write", "pipefifo_fops", "write_iter", "pipe_write");

    // fuse ioctl argument pages
    b.f("fuse_file_ioctl", "fuse");
    b.via("vfs_ioctl", "fuse_file_operations", "unlocked_ioctl", "fuse_file_ioctl");
    raw_copy(b, "fuse_do_ioctl", "fuse", "ioctl", "fuse_args_pages", "pages[i]", "alloc_page", "copy_page_from_iter");
    b.call("fuse_file_ioctl", "fuse_do_ioctl", 1);

    // algif
    raw_copy(b, "aead_sendmsg", "crypto_algif", "sendmsg", "af_alg_tsgl", "sg[i].page_link", "alloc_page", "copy_from_iter");
    b.via("sock_sendmsg", "algif_aead_ops", "sendmsg", "aead_sendmsg");
    raw_copy(b, "skcipher_sendmsg", "crypto_algif", "sendmsg", "af_alg_tsgl", "sg[i].page_link", "alloc_page", "copy_from_iter");
    b.via("sock_sendmsg", "algif_skcipher_ops", "sendmsg", "skcipher_sendmsg");

    // mptcp
    frag_refill_copy(b, "mptcp_sendmsg", "mptcp", "sendmsg", "copy_page_from_iter");
    b.via("sock_sendmsg", "mptcp_stream_ops", "sendmsg", "mptcp_sendmsg");
}

fn remap_patterns(b: &mut Builder) {
    // af_packet rings: pg_vec[i].buffer allocated at setsockopt, pg_vec mapped at mmap.
    b.f("packet_setsockopt", "af_packet");
    b.via("__sys_setsockopt", "packet_ops", "setsockopt", "packet_setsockopt");
    b.declare("packet_set_ring", "af_packet", Some("setsockopt"), None);
    b.f("alloc_pg_vec", "af_packet");
    b.f("alloc_one_pg_vec_page", "af_packet");
    b.call("packet_setsockopt", "packet_set_ring", 2);
    b.call("packet_set_ring", "alloc_pg_vec", 3);
    b.call("alloc_pg_vec", "alloc_one_pg_vec_page", 1);
    b.fact("alloc_pg_vec", "packet_ring_buffer", "pg_vec[i].buffer", AllocStore, 2);
    b.call("alloc_one_pg_vec_page", "__get_free_pages", 1);
    b.declare("packet_mmap", "af_packet", Some("mmap"), None);
    b.via("call_mmap", "packet_ops", "mmap", "packet_mmap");
    b.fact("packet_mmap", "packet_ring_buffer", "pg_vec", RemapUse, 3);
    b.call("packet_mmap", "vm_insert_page", 4);

    // io_uring SQ/CQ rings
    b.f("io_uring_setup", "io_uring");
    b.f("io_allocate_scq_urings", "io_uring");
    b.f("io_mem_alloc", "io_uring");
    b.call("io_uring_setup", "io_allocate_scq_urings", 2);
    b.call("io_allocate_scq_urings", "io_mem_alloc", 1);
    b.fact("io_allocate_scq_urings", "io_ring_ctx", "rings", AllocStore, 2);
    b.call("io_mem_alloc", "__get_free_pages", 1);
    b.declare("io_uring_mmap", "io_uring", Some("mmap"), None);
    b.via("call_mmap", "io_uring_fops", "mmap", "io_uring_mmap");
    b.fact("io_uring_mmap", "io_ring_ctx", "rings", RemapUse, 2);
    b.call("io_uring_mmap", "remap_pfn_range", 3);

    // bpf array and ringbuf maps
    b.f("bpf_map_mmap", "bpf");
    b.via("call_mmap", "bpf_map_fops", "mmap", "bpf_map_mmap");
    b.f("array_map_alloc", "bpf");
    b.f("bpf_map_area_mmapable_alloc", "bpf");
    b.call("array_map_alloc", "bpf_map_area_mmapable_alloc", 1);
    b.fact("array_map_alloc", "bpf_array", "value", AllocStore, 2);
    b.call("bpf_map_area_mmapable_alloc", "vmalloc_user", 1);
    b.declare("array_map_mmap", "bpf", Some("mmap"), None);
    b.via("bpf_map_mmap", "array_map_ops", "map_mmap", "array_map_mmap");
    b.fact("array_map_mmap", "bpf_array", "value", RemapUse, 1);
    b.call("array_map_mmap", "remap_vmalloc_range", 2);
    b.f("ringbuf_map_alloc", "bpf");
    b.f("bpf_ringbuf_area_alloc", "bpf");
    b.call("ringbuf_map_alloc", "bpf_ringbuf_area_alloc", 1);
    b.call("bpf_ringbuf_area_alloc", "alloc_pages", 1);
    b.fact("bpf_ringbuf_area_alloc", "bpf_ringbuf", "pages[i]", AllocStore, 2);
    b.declare("ringbuf_map_mmap", "bpf", Some("mmap"), None);
    b.via("bpf_map_mmap", "ringbuf_map_ops", "map_mmap", "ringbuf_map_mmap");
    b.fact("ringbuf_map_mmap", "bpf_ringbuf", "pages", RemapUse, 1);
    b.call("ringbuf_map_mmap", "remap_vmalloc_range", 2);

    // AF_XDP: the socket's rx field points at a separately allocated queue.
    b.f("xsk_setsockopt", "xdp");
    b.f("xsk_init_queue", "xdp");
    b.f("xskq_create", "xdp");
    b.call("xsk_setsockopt", "xsk_init_queue", 2);
    b.call("xsk_init_queue", "xskq_create", 1);
    b.call("xskq_create", "__get_free_pages", 1);
    b.fact("xskq_create", "xsk_queue", "ring", AllocStore, 2);
    b.declare("xsk_mmap", "xdp", Some("mmap"), None);
    b.via("call_mmap", "xsk_proto_ops", "mmap", "xsk_mmap");
    b.fact("xsk_mmap", "xdp_sock", "rx", RemapUse, 2);
    b.call("xsk_mmap", "remap_pfn_range", 3);
    b.child("xdp_sock", "rx", "xsk_queue");
}

fn distractors(b: &mut Builder) {
    // Object-allocator mediated.
    for (node, sub, alloc, record) in [
        ("sctp_user_addto_chunk", "sctp", "kmalloc", "sctp_datamsg"),
        ("load_msg", "ipc", "kmalloc", "msg_msg"),
        ("keyctl_update_key", "keys", "kvmalloc", "key_payload"),
        ("setxattr_copy", "xattr", "kvmalloc", "xattr_ctx"),
        ("vhost_net_build_xdp", "vhost", "kmem_cache_alloc", "xdp_buff"),
    ] {
        raw_copy(b, node, sub, "write", record, "data", alloc, "copy_from_user");
    }

    // Copy before store.
    b.declare("rxrpc_send_data", "rxrpc", Some("sendmsg"), None);
    b.call("rxrpc_send_data", "copy_page_from_iter", 1);
    b.fact("rxrpc_send_data", "page_frag", "page", CopyWrite, 1);
    b.call("rxrpc_send_data", "skb_page_frag_refill", 3);
    b.declare("espintcp_sendmsg", "xfrm", Some("sendmsg"), None);
    b.call("espintcp_sendmsg", "copy_from_iter", 1);
    b.fact("espintcp_sendmsg", "espintcp_msg", "page", CopyWrite, 2);
    b.call("espintcp_sendmsg", "alloc_page", 4);
    b.fact("espintcp_sendmsg", "espintcp_msg", "page", AllocStore, 5);
    b.declare("kcm_sendmsg", "kcm", Some("sendmsg"), None);
    b.call("kcm_sendmsg", "skb_copy_datagram_from_iter", 1);
    b.fact("kcm_sendmsg", "sk_buff", "frags[i].page", CopyWrite, 1);
    b.call("kcm_sendmsg", "sock_alloc_send_pskb", 4);

    // Field mismatch.
    b.declare("l2tp_ip_sendmsg", "l2tp", Some("sendmsg"), None);
    b.call("l2tp_ip_sendmsg", "sock_alloc_send_pskb", 2);
    b.call("l2tp_ip_sendmsg", "skb_copy_datagram_from_iter", 5);
    b.fact("l2tp_ip_sendmsg", "sk_buff", "head", CopyWrite, 5);
    b.declare("ping_v4_sendmsg", "ipv4", Some("sendmsg"), None);
    b.call("ping_v4_sendmsg", "alloc_page", 1);
    b.fact("ping_v4_sendmsg", "ping_fakehdr", "page", AllocStore, 2);
    b.call("ping_v4_sendmsg", "copy_from_iter", 4);
    b.fact("ping_v4_sendmsg", "ping_fakehdr", "data", CopyWrite, 4);
    b.declare("vsock_stream_sendmsg", "vsock", Some("sendmsg"), None);
    b.call("vsock_stream_sendmsg", "alloc_page", 1);
    b.fact("vsock_stream_sendmsg", "vsock_buf", "page", AllocStore, 2);
    b.call("vsock_stream_sendmsg", "copy_from_iter", 4);
    b.fact("vsock_stream_sendmsg", "virtio_vsock_pkt", "page", CopyWrite, 4);

    // Arch-specific.
    b.declare("sparc_pipe_write_compat", "pipe", Some("write"), Some("sparc"));
    b.call("sparc_pipe_write_compat", "alloc_page", 1);
    b.fact("sparc_pipe_write_compat", "pipe_buffer", "page", AllocStore, 2);
    b.call("sparc_pipe_write_compat", "copy_page_from_iter", 3);
    b.fact("sparc_pipe_write_compat", "pipe_buffer", "page", CopyWrite, 4);
    b.declare("s390_hypfs_write", "hypfs", Some("write"), Some("s390"));
    b.call("s390_hypfs_write", "__get_free_pages", 1);
    b.fact("s390_hypfs_write", "hypfs_dbfs_data", "buf", AllocStore, 2);
    b.call("s390_hypfs_write", "copy_from_user", 3);
    b.fact("s390_hypfs_write", "hypfs_dbfs_data", "buf", CopyWrite, 4);
    b.declare("privcmd_buf_write", "xen", Some("write"), None);
    b.declare("xen_alloc_unpopulated_pages", "xen", None, Some("x86"));
    b.call("xen_alloc_unpopulated_pages", "alloc_pages", 1);
    b.call("privcmd_buf_write", "xen_alloc_unpopulated_pages", 1);
    b.fact("privcmd_buf_write", "privcmd_buf", "page", AllocStore, 2);
    b.call("privcmd_buf_write", "copy_from_user", 3);
    b.fact("privcmd_buf_write", "privcmd_buf", "page", CopyWrite, 4);
    b.f("vdso_alloc_pages", "vdso");
    b.call("vdso_alloc_pages", "alloc_pages", 1);
    b.fact("vdso_alloc_pages", "vdso_image", "pages", AllocStore, 2);
    b.declare("sparc_vdso_mmap", "vdso", Some("mmap"), Some("sparc"));
    b.member("vdso_mapping_ops", "mmap", "sparc_vdso_mmap");
    b.fact("sparc_vdso_mmap", "vdso_image", "pages", RemapUse, 1);
    b.call("sparc_vdso_mmap", "vm_insert_page", 2);

    // Only one trace.
    b.f("page_pool_fill_cache", "page_pool");
    b.call("page_pool_fill_cache", "alloc_pages", 1);
    b.fact("page_pool_fill_cache", "page_pool", "alloc.cache", AllocStore, 2);
    b.declare("proc_pid_cmdline_write", "proc", Some("write"), None);
    b.call("proc_pid_cmdline_write", "copy_from_user", 1);
    b.fact("proc_pid_cmdline_write", "mm_struct", "arg_start", CopyWrite, 2);

    // Crossing node that never stores the page.
    b.declare("ax25_sendmsg", "ax25", Some("sendmsg"), None);
    b.call("ax25_sendmsg", "alloc_page", 1);
    b.call("ax25_sendmsg", "copy_from_iter", 3);
    b.fact("ax25_sendmsg", "ax25_cb", "buf", CopyWrite, 3);

    // Allocator beyond the depth cap.
    b.declare("deepfs_write", "deepfs", Some("write"), None);
    let mut prev = "deepfs_write".to_string();
    for i in 1..=DEEP_CHAIN {
        let hop = format!("deepfs_hop{i}");
        b.f(&hop, "deepfs");
        b.call(&prev, &hop, 1);
        prev = hop;
    }
    b.call(&prev, "alloc_page", 1);
    b.fact("deepfs_write", "deepfs_req", "page", AllocStore, 2);
    b.call("deepfs_write", "copy_from_user", 3);
    b.fact("deepfs_write", "deepfs_req", "page", CopyWrite, 4);

    // Store reached only through a function table.
    b.declare("seq_buf_write", "seq_file", Some("write"), None);
    b.f("seq_buf_alloc", "seq_file");
    b.call("seq_buf_alloc", "alloc_page", 1);
    b.fact("seq_buf_alloc", "seq_buf", "page", AllocStore, 2);
    b.via("seq_buf_write", "seq_buf_ops", "alloc", "seq_buf_alloc");
    b.call("seq_buf_write", "copy_from_user", 3);
    b.fact("seq_buf_write", "seq_buf", "page", CopyWrite, 3);

    // Remapping distractors.
    b.f("dma_buf_alloc_region", "dma_buf");
    b.call("dma_buf_alloc_region", "alloc_pages", 1);
    b.fact("dma_buf_alloc_region", "vfio_region", "pages", AllocStore, 2);
    b.declare("vfio_pci_mmap", "vfio", Some("mmap"), None);
    b.via("call_mmap", "vfio_pci_ops", "mmap", "vfio_pci_mmap");
    b.fact("vfio_pci_mmap", "vfio_region", "pages", RemapUse, 1);
    b.call("vfio_pci_mmap", "remap_pfn_range", 2);

    b.declare("hpet_mmap", "hpet", Some("mmap"), None);
    b.via("call_mmap", "hpet_fops", "mmap", "hpet_mmap");
    b.fact("hpet_mmap", "hpet_dev", "hd_phys_address", RemapUse, 1);
    b.call("hpet_mmap", "remap_pfn_range", 2);

    b.f("fb_alloc_screen", "fbdev");
    b.call("fb_alloc_screen", "alloc_pages", 1);
    b.fact("fb_alloc_screen", "fb_info", "screen_buffer", AllocStore, 2);
    b.declare("fb_mmap", "fbdev", Some("mmap"), None);
    b.via("call_mmap", "fb_fops", "mmap", "fb_mmap");
    b.fact("fb_mmap", "fb_info", "fix.smem_start", RemapUse, 1);
    b.call("fb_mmap", "remap_pfn_range", 2);

    b.f("snd_pcm_lib_malloc_pages", "sound");
    b.call("snd_pcm_lib_malloc_pages", "alloc_pages", 1);
    b.fact("snd_pcm_lib_malloc_pages", "snd_pcm_runtime", "dma_buffer.area.page", AllocStore, 2);
    b.declare("snd_pcm_mmap", "sound", Some("mmap"), None);
    b.via("call_mmap", "snd_pcm_f_ops", "mmap", "snd_pcm_mmap");
    b.fact("snd_pcm_mmap", "snd_pcm_runtime", "dma_buffer", RemapUse, 1);
    b.call("snd_pcm_mmap", "vm_map_pages", 2);

    b.f("aio_setup_ring", "aio");
    b.call("aio_setup_ring", "alloc_pages", 1);
    b.fact("aio_setup_ring", "kioctx", "ring_pages", AllocStore, 2);
    b.declare("aio_ring_mmap", "aio", Some("mmap"), None);
    b.via("call_mmap", "aio_ring_fops", "mmap", "aio_ring_mmap");
    b.fact("aio_ring_mmap", "kioctx", "ring_pages", RemapUse, 1);

    b.f("hugetlb_alloc_folio", "hugetlbfs");
    b.call("hugetlb_alloc_folio", "alloc_pages", 1);
    b.fact("hugetlb_alloc_folio", "hugetlbfs_inode_info", "folio", AllocStore, 2);
    b.declare("hugetlbfs_file_mmap", "hugetlbfs", Some("mmap"), None);
    b.via("call_mmap", "hugetlbfs_file_operations", "mmap", "hugetlbfs_file_mmap");
    b.fact("hugetlbfs_file_mmap", "hugetlbfs_inode_info", "folio", RemapUse, 1);
    b.f("hugetlb_fault_setup", "hugetlbfs");
    b.call("hugetlbfs_file_mmap", "hugetlb_fault_setup", 2);
}

/// Shared plumbing, every known callsite pattern and every distractor.
pub fn full_corpus() -> CallGraphDoc {
    let mut b = Builder::new();
    plumbing(&mut b);
    copy_write_patterns(&mut b);
    remap_patterns(&mut b);
    distractors(&mut b);
    b.finish()
}

/// Shared plumbing and the distractors alone.
pub fn distractor_corpus() -> CallGraphDoc {
    let mut b = Builder::new();
    plumbing(&mut b);
    distractors(&mut b);
    b.finish()
}

/// Shared plumbing and the known callsite patterns alone.
pub fn pattern_corpus() -> CallGraphDoc {
    let mut b = Builder::new();
    plumbing(&mut b);
    copy_write_patterns(&mut b);
    remap_patterns(&mut b);
    b.finish()
}

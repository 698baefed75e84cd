import logging
import queue
import socket
import struct
import threading

from src.shared.config import SOCKET_BUFFER_SIZE, discovery_port, static_peer_list
from src.transport.base import DatagramTransport

logger = logging.getLogger(__name__)

RECV_SIZE = 65535
POLL_INTERVAL = 0.2


def _resolve_host(config: dict) -> str:
    if config.get("unicast_host"):
        return config["unicast_host"]
    try:
        route_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        route_sock.connect((config.get("multicast_group", "239.255.0.1"), 9))
        host = route_sock.getsockname()[0]
        route_sock.close()
        return host
    except OSError:
        return "127.0.0.1"


class UdpTransport(DatagramTransport):
    """Real UDP sockets.

    A unicast socket carries data and control traffic. In multicast mode a
    second socket joins the discovery group on the domain's discovery port;
    with static peers, discovery datagrams go unicast to each listed peer.
    One receive thread per socket pushes (datagram, address) into a queue
    that the owning participant drains.
    """

    def __init__(self, config: dict):
        self.config = config
        self.static_peers = static_peer_list(config)
        self.group = (config["multicast_group"], discovery_port(config))
        self._queue: queue.Queue = queue.Queue()
        self._closed = threading.Event()
        buffer_size = int(config.get("socket_buffer_size", SOCKET_BUFFER_SIZE))

        self._unicast = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._set_buffers(self._unicast, buffer_size)
        self._unicast.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, 1)
        self._unicast.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
        self._unicast.bind(("", int(config.get("unicast_port", 0))))
        self._unicast.settimeout(POLL_INTERVAL)
        self.local_address = (_resolve_host(config), self._unicast.getsockname()[1])

        self._sockets = [self._unicast]
        if not self.static_peers:
            self._sockets.append(self._open_group_socket(buffer_size))

        self._threads = []
        for sock in self._sockets:
            thread = threading.Thread(target=self._receive_loop, args=(sock,), daemon=True)
            thread.start()
            self._threads.append(thread)
        logger.info(
            f"UDP transport on {self.local_address[0]}:{self.local_address[1]} "
            f"({'static peers ' + str(self.static_peers) if self.static_peers else 'multicast ' + str(self.group)})"
        )

    @staticmethod
    def _set_buffers(sock: socket.socket, size: int) -> None:
        for option in (socket.SO_RCVBUF, socket.SO_SNDBUF):
            try:
                sock.setsockopt(socket.SOL_SOCKET, option, size)
            except OSError as e:
                logger.warning(f"Could not set socket buffer to {size} bytes: {e}")

    def _open_group_socket(self, buffer_size: int) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        if hasattr(socket, "SO_REUSEPORT"):
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
        self._set_buffers(sock, buffer_size)
        sock.bind(("", self.group[1]))
        mreq = struct.pack("4s4s", socket.inet_aton(self.group[0]), socket.inet_aton("0.0.0.0"))
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        sock.settimeout(POLL_INTERVAL)
        return sock

    def _receive_loop(self, sock: socket.socket) -> None:
        while not self._closed.is_set():
            try:
                datagram, address = sock.recvfrom(RECV_SIZE)
            except socket.timeout:
                continue
            except OSError as e:
                if not self._closed.is_set():
                    logger.warning(f"UDP receive failed: {e}")
                break
            self._queue.put((datagram, address))

    def send(self, datagram: bytes, address: tuple) -> None:
        try:
            self._unicast.sendto(datagram, address)
        except OSError as e:
            logger.warning(f"UDP send to {address} failed: {e}")

    def send_discovery(self, datagram: bytes) -> None:
        targets = self.static_peers or [self.group]
        for target in targets:
            self.send(datagram, target)

    def receive(self, timeout: float = 0.0) -> list:
        items = []
        try:
            items.append(self._queue.get(timeout=timeout) if timeout > 0 else self._queue.get_nowait())
        except queue.Empty:
            return items
        while True:
            try:
                items.append(self._queue.get_nowait())
            except queue.Empty:
                return items

    def close(self) -> None:
        self._closed.set()
        for sock in self._sockets:
            sock.close()
        for thread in self._threads:
            thread.join(timeout=1.0)

#ifndef SPIDER_H
#define SPIDER_H
#endif
